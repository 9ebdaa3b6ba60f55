"""Config-driven search runs: load, encode, split, propose, train, report."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import multiprocessing
import os
import time
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import yaml

from .blocks import BLOCK_TYPES, Mapper
from .data import Column, Schema, load_table, prepare_splits
from .graph import GraphSpec, materialize_model
from .recipes import RECIPES, build_recipe
from .space import Bool, Choice, ConfigError, Fixed, FloatRange, IntRange, canonical_text
from .trainer import TrainConfig, TrainingError, train_trial
from .tuners import TUNERS, Oracle, StopSearch, SpaceExhausted

logger = logging.getLogger(__name__)

DATA_ROOT_ENV = "RECSEARCH_DATA_ROOT"
TRIAL_LOG = "trials.jsonl"


# --------------------------------------------------------------------------
# Config


def parse_domain(spec):
    """Config value to a domain: scalars are fixed, mappings name the kind."""
    if not isinstance(spec, dict):
        return Fixed(spec)
    if "choice" in spec:
        return Choice(spec["choice"])
    if "int" in spec:
        lo, hi = spec["int"]
        return IntRange(int(lo), int(hi), int(spec.get("step", 1)))
    if "float" in spec:
        lo, hi = spec["float"]
        return FloatRange(float(lo), float(hi), bool(spec.get("log", False)))
    if "bool" in spec:
        return Bool()
    if "fixed" in spec:
        return Fixed(spec["fixed"])
    raise ConfigError(f"cannot parse hyperparameter domain {spec!r}")


def graph_from_config(spec: Dict[str, Any], schema: Schema, **options) -> GraphSpec:
    """Explicit block list to a graph; ``options`` are pipeline-level
    settings, overridden by the same keys inside ``spec``."""
    blocks = []
    for b in spec.get("blocks", []):
        b = dict(b)
        type_name = b.pop("type", None)
        cls = BLOCK_TYPES.get(type_name)
        if cls is None:
            raise ConfigError(f"unknown block type {type_name!r}")
        name = b.pop("name")
        hparams = {k: parse_domain(v) for k, v in (b.pop("hparams", None) or {}).items()}
        if issubclass(cls, Mapper):
            kwargs = {}
            if "column" in b:
                kwargs["column"] = b.pop("column")
            if "columns" in b:
                kwargs["columns"] = b.pop("columns")
            if "dim" in hparams:
                kwargs["dim"] = hparams.pop("dim")
            if hparams:
                raise ConfigError(f"mapper {name!r}: unknown hyperparameters {sorted(hparams)}")
            block = cls(name, **kwargs)
        else:
            block = cls(name, b.pop("inputs", []), **hparams)
        if b:
            raise ConfigError(f"block {name!r}: unknown keys {sorted(b)}")
        blocks.append(block)
    return GraphSpec(blocks, schema, **{**options, **_graph_options(spec)})


def _graph_options(spec: Dict[str, Any]) -> Dict[str, Any]:
    opts = {}
    if "embedding_dim" in spec:
        opts["embedding_dim"] = parse_domain(spec["embedding_dim"])
    if "learning_rate" in spec:
        opts["learning_rate"] = parse_domain(spec["learning_rate"])
    return opts


@dataclass
class DatasetConfig:
    path: str
    format: Optional[str] = None
    schema: Optional[Schema] = None
    max_rows: Optional[int] = None
    min_count: int = 1
    hash_buckets: Optional[int] = None


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig
    recipe: Optional[str] = None
    graph: Optional[Dict[str, Any]] = None
    graph_options: Dict[str, Any] = field(default_factory=dict)
    tuner: str = "random"
    max_trials: int = 10
    seed: int = 0
    training: TrainConfig = field(default_factory=TrainConfig)
    base_dir: str = "."

    @property
    def dataset_path(self) -> str:
        path = os.path.expanduser(self.dataset.path)
        if os.path.isabs(path):
            return path
        root = os.environ.get(DATA_ROOT_ENV) or self.base_dir
        return os.path.join(root, path)


def _schema_from_config(spec) -> Schema:
    cols = [Column(c["name"], c["role"]) for c in spec["columns"]]
    return Schema(cols, delimiter=spec.get("delimiter", ","), header=bool(spec.get("header", False)))


def parse_config(raw: Dict[str, Any], base_dir: str = ".") -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(raw) - {"dataset", "pipeline", "tuner", "training", "seed"}
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    ds = dict(raw.get("dataset") or {})
    if "path" not in ds:
        raise ConfigError("dataset.path is required")
    schema = _schema_from_config(ds["schema"]) if ds.get("schema") else None
    fmt = ds.get("format")
    if schema is None and fmt not in ("movielens", "criteo", "avazu"):
        raise ConfigError("dataset needs a schema or a format of movielens, criteo or avazu")
    dataset = DatasetConfig(
        path=str(ds["path"]),
        format=fmt,
        schema=schema,
        max_rows=ds.get("max_rows"),
        min_count=int(ds.get("min_count", 1)),
        hash_buckets=ds.get("hash_buckets"),
    )
    pipe = dict(raw.get("pipeline") or {})
    recipe, graph = pipe.get("recipe"), pipe.get("graph")
    if (recipe is None) == (graph is None):
        raise ConfigError("pipeline needs exactly one of 'recipe' or 'graph'")
    if recipe is not None and recipe not in RECIPES:
        raise ConfigError(f"unknown recipe {recipe!r}; choose from {', '.join(RECIPES)}")
    tuner = dict(raw.get("tuner") or {})
    name = tuner.get("name", "random")
    if name not in TUNERS:
        raise ConfigError(f"unknown tuner {name!r}; choose from {', '.join(TUNERS)}")
    training = dict(raw.get("training") or {})
    seed = int(raw.get("seed", tuner.get("seed", 0)))
    try:
        train_cfg = TrainConfig(seed=seed, **training)
    except TypeError as exc:
        raise ConfigError(f"training section: {exc}") from None
    return ExperimentConfig(
        dataset=dataset,
        recipe=recipe,
        graph=graph,
        graph_options=_graph_options(pipe),
        tuner=name,
        max_trials=int(tuner.get("max_trials", 10)),
        seed=seed,
        training=train_cfg,
        base_dir=base_dir,
    )


def load_config(path) -> ExperimentConfig:
    """Read a YAML (or JSON) experiment config."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
    return parse_config(raw, base_dir=os.path.dirname(os.path.abspath(path)))


def build_graph(config: ExperimentConfig, schema: Schema) -> GraphSpec:
    if config.recipe is not None:
        return build_recipe(config.recipe, schema, **config.graph_options)
    graph = graph_from_config(config.graph, schema, **config.graph_options)
    graph.validate()
    return graph


# --------------------------------------------------------------------------
# Report


@dataclass
class TrialRow:
    trial: int
    assignment: Dict[str, Any]
    val_score: Optional[float]
    test_score: Optional[float]
    seconds: float
    status: str
    error: Optional[str] = None


@dataclass
class Report:
    rows: List[TrialRow]
    tuner: str
    recipe: str
    dataset: str
    metric: str
    stopped: str = "max_trials"

    @property
    def best(self) -> Optional[TrialRow]:
        done = [r for r in self.rows if r.status == "completed"]
        if not done:
            return None
        return min(done, key=lambda r: (r.val_score, r.trial))

    def summary(self) -> Dict[str, Any]:
        best = self.best
        return {
            "tuner": self.tuner,
            "recipe": self.recipe,
            "dataset": self.dataset,
            "metric": self.metric,
            "n_trials": len(self.rows),
            "n_failed": sum(r.status == "failed" for r in self.rows),
            "stopped": self.stopped,
            "best_trial": best.trial if best else None,
            "best_val": _round(best.val_score) if best else None,
            "best_test": _round(best.test_score) if best else None,
            "best_assignment": best.assignment if best else None,
        }


def _round(x):
    return None if x is None else round(float(x), 6)


def _fmt(x) -> str:
    if x is None:
        return ""
    if math.isinf(x):
        return "inf"
    return f"{x:.6f}"


def write_report(report: Report, out_dir, timings: bool = False) -> None:
    """Write ``trials.csv`` and ``summary.json``.

    Wall-clock seconds are only written to the CSV when ``timings`` is set so
    that reruns with the same seed produce identical bytes; the trial log
    always records them.
    """
    os.makedirs(out_dir, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["trial", "assignment", "val_score", "test_score", "seconds"])
    for row in sorted(report.rows, key=lambda r: r.trial):
        val = row.val_score if row.status == "completed" else math.inf
        writer.writerow([
            row.trial, canonical_text(row.assignment), _fmt(val), _fmt(row.test_score),
            _fmt(row.seconds) if timings else "",
        ])
    with open(os.path.join(out_dir, "trials.csv"), "w", newline="") as fh:
        fh.write(buf.getvalue())
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(report.summary(), fh, indent=2, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------------
# Running


@dataclass
class _Context:
    graph: GraphSpec
    splits: tuple
    training: TrainConfig
    seed: int


_WORKER_CONTEXT: Optional[_Context] = None


def _run_trial(ctx: _Context, trial_id: int, assignment) -> TrialRow:
    start = time.perf_counter()
    train, val, test = ctx.splits
    try:
        model = materialize_model(ctx.graph, assignment, ctx.seed, train)
        result = train_trial(model, train, val, test, ctx.training)
    except (TrainingError, ConfigError, ValueError) as exc:
        logger.warning("trial %d failed: %s", trial_id, exc)
        return TrialRow(trial_id, assignment, None, None, time.perf_counter() - start, "failed", str(exc))
    return TrialRow(
        trial_id, assignment, result.best_val, result.test_score, time.perf_counter() - start, "completed"
    )


def _run_in_worker(trial_id: int, assignment) -> TrialRow:
    return _run_trial(_WORKER_CONTEXT, trial_id, assignment)


def prepare(config: ExperimentConfig):
    """Load and split the data and build the graph.  Returns (graph, splits)."""
    path = config.dataset_path
    if not os.path.isfile(path):
        raise ConfigError(f"dataset file not found: {path}")
    table = load_table(path, config.dataset.schema, config.dataset.format, config.dataset.max_rows)
    graph = build_graph(config, table.schema)
    splits = prepare_splits(table, config.seed, config.dataset.min_count, config.dataset.hash_buckets)
    return graph, splits


def _log_record(row: TrialRow, tuner: str) -> Dict[str, Any]:
    return {
        "trial": row.trial,
        "tuner": tuner,
        "assignment": row.assignment,
        "assignment_text": canonical_text(row.assignment),
        "score": row.val_score if row.status == "completed" else None,
        "test_score": row.test_score,
        "seconds": row.seconds,
        "error": row.error,
    }


def run_experiment(
    config: ExperimentConfig,
    out_dir=None,
    workers: int = 1,
    timings: bool = False,
    resume: bool = False,
) -> Report:
    """Run the search described by ``config`` and write its report to ``out_dir``.

    With ``resume`` an existing trial log in ``out_dir`` is replayed first and
    the search continues from there.  A failing trial is recorded and the
    search goes on.
    """
    global _WORKER_CONTEXT
    graph, splits = prepare(config)
    ctx = _Context(graph, splits, config.training, config.seed)
    oracle = Oracle(graph.space, config.max_trials, config.seed)
    propose = TUNERS[config.tuner]
    rows: Dict[int, TrialRow] = {}
    log_path = os.path.join(out_dir, TRIAL_LOG) if out_dir else None
    if resume and log_path and os.path.isfile(log_path):
        with open(log_path) as fh:
            records = [json.loads(line) for line in fh if line.strip()]
        oracle.replay(records)
        for rec in records:
            status = "completed" if rec["score"] is not None else "failed"
            rows[rec["trial"]] = TrialRow(
                rec["trial"], rec["assignment"], rec["score"], rec["test_score"], rec["seconds"], status, rec.get("error")
            )
    elif log_path:
        os.makedirs(out_dir, exist_ok=True)
        open(log_path, "w").close()

    def record(row: TrialRow):
        oracle.report_completion(row.trial, row.val_score, failed=row.status != "completed")
        rows[row.trial] = row
        if log_path:
            with open(log_path, "a") as fh:
                fh.write(json.dumps(_log_record(row, config.tuner), sort_keys=True) + "\n")
        logger.info("trial %d %s val=%s test=%s", row.trial, row.status, row.val_score, row.test_score)

    stopped = "max_trials"
    if workers <= 1:
        while True:
            try:
                trial = propose(oracle)
            except StopSearch as exc:
                stopped = "space_exhausted" if isinstance(exc, SpaceExhausted) else "max_trials"
                break
            oracle.start(trial.id)
            record(_run_trial(ctx, trial.id, trial.assignment))
    else:
        _WORKER_CONTEXT = ctx
        mp = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=mp) as pool:
            running = {}
            exhausted = False
            while True:
                while not exhausted and len(running) < workers:
                    try:
                        trial = propose(oracle)
                    except StopSearch as exc:
                        exhausted = True
                        if isinstance(exc, SpaceExhausted):
                            stopped = "space_exhausted"
                        break
                    oracle.start(trial.id)
                    running[pool.submit(_run_in_worker, trial.id, trial.assignment)] = trial.id
                if not running:
                    break
                done, _ = wait(running, return_when=FIRST_COMPLETED)
                for fut in sorted(done, key=lambda f: running[f]):
                    running.pop(fut)
                    record(fut.result())
        _WORKER_CONTEXT = None

    dataset = config.dataset.format or os.path.basename(config.dataset.path)
    report = Report(
        [rows[k] for k in sorted(rows)],
        tuner=config.tuner,
        recipe=config.recipe or "custom",
        dataset=dataset,
        metric="mse" if graph.task == "rating" else "logloss",
        stopped=stopped,
    )
    if out_dir:
        write_report(report, out_dir, timings=timings)
    return report
