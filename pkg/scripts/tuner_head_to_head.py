"""Best-so-far curves of the three tuners on a 1-d quadratic, many seeds.

    python3 scripts/tuner_head_to_head.py --seeds 50 --trials 30
"""

import argparse

import numpy as np

from recsearch.space import FloatRange, HyperSpace
from recsearch.tuners import best_so_far, run_search


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--optimum", type=float, default=0.3)
    args = ap.parse_args()

    space = HyperSpace()
    space.declare("x", FloatRange(0.0, 1.0))

    def objective(a):
        return (a["x"] - args.optimum) ** 2

    curves = {}
    for tuner in ("random", "greedy", "bayesian"):
        curves[tuner] = np.array(
            [best_so_far(run_search(space, objective, tuner, args.trials, seed)) for seed in range(args.seeds)]
        )
    print("trial  " + "  ".join(f"{t:>10s}" for t in curves))
    for k in range(args.trials):
        print(f"{k + 1:5d}  " + "  ".join(f"{np.median(c[:, k]):10.2e}" for c in curves.values()))
    wins = int(np.sum(curves["bayesian"][:, -1] < curves["random"][:, -1]))
    print(f"bayesian ahead of random at trial {args.trials} in {wins}/{args.seeds} seeds (median shown)")


if __name__ == "__main__":
    main()
