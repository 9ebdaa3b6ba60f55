"""MovieLens-1M rating prediction: MF with random search against AutoRec-RP
with Bayesian optimization, under the 10-trial / 10-epoch protocol.

    RECSEARCH_DATA_ROOT=~/data python3 scripts/movielens_repro.py

Expects ``ml-1m/ratings.dat`` under the data root.  ``--synthetic N`` runs
the same comparison on N generated ratings instead, for a quick dry run.
"""

import argparse
import json
import os
import time

from recsearch.experiment import DATA_ROOT_ENV, DatasetConfig, ExperimentConfig, run_experiment
from recsearch.synthetic import rating_table, write_table
from recsearch.trainer import TrainConfig

RUNS = [("mf", "random"), ("autorec_rp", "bayesian")]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data-root", default=os.environ.get(DATA_ROOT_ENV, "data"))
    ap.add_argument("--synthetic", type=int, default=0, help="use N generated ratings instead")
    ap.add_argument("--trials", type=int, default=10)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="runs/movielens")
    args = ap.parse_args()

    if args.synthetic:
        path = os.path.abspath(os.path.join(args.out, "ratings.dat"))
        write_table(rating_table(args.synthetic, n_users=2000, n_items=1000, seed=args.seed), path)
    else:
        path = os.path.abspath(os.path.join(args.data_root, "ml-1m", "ratings.dat"))
        if not os.path.isfile(path):
            raise SystemExit(f"{path} not found; pass --data-root or --synthetic N")

    results = {}
    for recipe, tuner in RUNS:
        config = ExperimentConfig(
            dataset=DatasetConfig(path=path, format="movielens"),
            recipe=recipe,
            tuner=tuner,
            max_trials=args.trials,
            seed=args.seed,
            training=TrainConfig(epochs=args.epochs, batch_size=1024, early_stop_patience=1, seed=args.seed),
        )
        start = time.perf_counter()
        report = run_experiment(config, os.path.join(args.out, f"{recipe}_{tuner}"), workers=args.workers)
        elapsed = time.perf_counter() - start
        best = report.best
        results[f"{recipe}/{tuner}"] = {"val": best.val_score, "test": best.test_score, "seconds": elapsed}
        print(f"{recipe:11s} {tuner:9s} test MSE {best.test_score:.4f}  val {best.val_score:.4f}  {elapsed / 60:.1f} min")
    with open(os.path.join(args.out, "results.json"), "w") as fh:
        json.dump(results, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
