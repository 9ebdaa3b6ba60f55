"""Command line entry point: ``recsearch run | recipes | validate``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .data import DataError
from .experiment import load_config, prepare, run_experiment
from .recipes import RECIPES, recipe_task
from .space import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _module_of(exc: BaseException) -> str:
    """Innermost package module the error was raised from."""
    name = "recsearch"
    tb = exc.__traceback__
    while tb is not None:
        mod = tb.tb_frame.f_globals.get("__name__", "")
        if mod.startswith("recsearch.") and mod != "recsearch.cli":
            name = mod.rsplit(".", 1)[-1]
        tb = tb.tb_next
    return name


def _config_arg(args) -> str:
    path = args.config_opt or args.config
    if not path:
        raise ConfigError("no config file given")
    return path


def _load(args):
    config = load_config(_config_arg(args))
    if args.seed is not None:
        config.seed = args.seed
        config.training = dataclasses.replace(config.training, seed=args.seed)
    return config


def cmd_run(args) -> int:
    config = _load(args)
    report = run_experiment(config, args.out, workers=args.workers, timings=args.timings, resume=args.resume)
    summary = report.summary()
    print(
        f"{summary['recipe']} / {summary['tuner']}: {summary['n_trials']} trials, "
        f"best {summary['metric']} val={summary['best_val']} test={summary['best_test']} "
        f"(trial {summary['best_trial']})"
    )
    if args.out:
        print(f"report written to {args.out}")
    return EXIT_OK


def cmd_recipes(args) -> int:
    for name in RECIPES:
        print(f"{name}\t{recipe_task(name)}")
    return EXIT_OK


def cmd_validate(args) -> int:
    config = _load(args)
    config.dataset.max_rows = min(config.dataset.max_rows or 1000, 1000)
    graph, _ = prepare(config)
    space = graph.space
    print(f"pipeline ok: {len(graph.blocks)} blocks, task {graph.task}")
    for hp in space:
        cond = f"  [if {hp.condition[0]} == {hp.condition[1]!r}]" if hp.condition else ""
        print(f"  {hp.name}: {hp.domain}{cond}")
    print(f"search dimension {space.dimension}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="recsearch", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("config", nargs="?")
        p.add_argument("--config", dest="config_opt")
        p.add_argument("--seed", type=int, help="override the config seed")

    run = sub.add_parser("run", help="run a search from a config file")
    with_config(run)
    run.add_argument("--out", help="report directory")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--timings", action="store_true", help="write wall-clock seconds to trials.csv")
    run.add_argument("--resume", action="store_true", help="continue from the trial log in --out")
    run.set_defaults(func=cmd_run)

    rec = sub.add_parser("recipes", help="list the built-in recipes")
    rec.set_defaults(func=cmd_recipes)

    val = sub.add_parser("validate", help="check a config without training")
    with_config(val)
    val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * args.verbose
    logging.basicConfig(level=max(level, logging.DEBUG), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error [{_module_of(exc)}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, Exception) as exc:  # noqa: BLE001
        print(f"error [{_module_of(exc)}]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
