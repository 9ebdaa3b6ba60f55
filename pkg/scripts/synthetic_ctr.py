"""Search autorec_ctr on clicks drawn from a known logistic-FM model.

Writes the generated log to disk, runs one search per tuner through the
normal experiment runner, and compares the best trial's test logloss with
the Bayes-optimal logloss of the generator on the same test rows.

    python3 scripts/synthetic_ctr.py --rows 200000 --out runs/synthetic_ctr
"""

import argparse
import json
import os
import time

from recsearch.data import split_indices
from recsearch.experiment import DatasetConfig, ExperimentConfig, run_experiment
from recsearch.synthetic import logistic_fm_table, write_table
from recsearch.trainer import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=200_000)
    ap.add_argument("--fields", type=int, default=10)
    ap.add_argument("--vocab", type=int, default=50)
    ap.add_argument("--dim", type=int, default=8)
    ap.add_argument("--factor-scale", type=float, default=None, help="factor std (default 0.1)")
    ap.add_argument("--linear-scale", type=float, default=None, help="linear weight std (default 0.5)")
    ap.add_argument("--tuners", default="random,greedy,bayesian")
    ap.add_argument("--trials", type=int, default=10)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/synthetic_ctr")
    args = ap.parse_args()

    scales = {}
    if args.factor_scale is not None:
        scales["factor_scale"] = args.factor_scale
    if args.linear_scale is not None:
        scales["linear_scale"] = args.linear_scale
    gen = logistic_fm_table(args.rows, args.fields, args.vocab, args.dim, seed=args.seed, **scales)
    path = os.path.join(args.out, "clicks.tsv")
    write_table(gen.table, path)
    _, _, test_idx = split_indices(args.rows, args.seed)
    bayes = gen.bayes_logloss(test_idx)
    print(f"bayes-optimal test logloss {bayes:.4f}")

    results = {"bayes": bayes}
    for tuner in args.tuners.split(","):
        config = ExperimentConfig(
            dataset=DatasetConfig(path=os.path.abspath(path), schema=gen.table.schema),
            recipe="autorec_ctr",
            tuner=tuner,
            max_trials=args.trials,
            seed=args.seed,
            training=TrainConfig(epochs=args.epochs, seed=args.seed),
        )
        start = time.perf_counter()
        report = run_experiment(config, os.path.join(args.out, tuner))
        elapsed = time.perf_counter() - start
        best = report.best
        gap = best.test_score - bayes
        results[tuner] = {"test": best.test_score, "gap": gap, "seconds": elapsed, "assignment": best.assignment}
        print(f"{tuner:9s} best test {best.test_score:.4f}  gap {gap:+.4f}  {elapsed / 60:.1f} min  {best.assignment}")
    with open(os.path.join(args.out, "results.json"), "w") as fh:
        json.dump(results, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
