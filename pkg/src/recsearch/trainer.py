"""Per-trial training loop with Adam, patience-based early stopping and evaluation."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .data import EncodedDataset, iterate_batches
from .graph import ConcreteModel
from .space import ConfigError
from .tensor import LOGLOSS_EPS, AdamState, TensorError, adam_update, backprop

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """The trial cannot produce a finite score."""


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 1024
    early_stop_patience: int = 1
    seed: int = 0
    eval_batch_size: int = 8192

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.early_stop_patience < 0:
            raise ConfigError("early_stop_patience must be non-negative")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ConfigError("batch sizes must be at least 1")


@dataclass
class TrainResult:
    train_loss: List[float]
    val_scores: List[float]
    best_val: float
    best_epoch: int  # 0-based index into val_scores
    test_score: Optional[float]
    snapshot: Dict[str, np.ndarray] = field(repr=False)
    seconds: float = 0.0


def early_stop_update(history: Sequence[float], patience: int = 1) -> bool:
    """True once more than ``patience`` consecutive epochs failed to strictly
    improve on the running best."""
    if not history:
        raise ValueError("early_stop_update needs at least one score")
    best = history[0]
    bad = 0
    for score in history[1:]:
        if score < best:
            best = score
            bad = 0
        else:
            bad += 1
    return bad > patience


def _batch_loss_sum(task: str, pred: np.ndarray, target: np.ndarray) -> float:
    if task == "rating":
        diff = pred - target
        return float(np.dot(diff, diff))
    p = np.clip(pred, LOGLOSS_EPS, 1.0 - LOGLOSS_EPS)
    return float(-np.sum(target * np.log(p) + (1.0 - target) * np.log1p(-p)))


def evaluate_metric(model: ConcreteModel, split: EncodedDataset, batch_size: int = 8192) -> float:
    """Mean squared error (rating) or clipped logloss (ctr) over the whole split."""
    if len(split) == 0:
        raise ValueError("cannot evaluate on an empty split")
    total = 0.0
    for batch in iterate_batches(split, batch_size):
        total += _batch_loss_sum(model.task, model.predict(batch), batch.target)
    return total / len(split)


def train_trial(
    model: ConcreteModel,
    train: EncodedDataset,
    val: EncodedDataset,
    test: Optional[EncodedDataset] = None,
    config: TrainConfig = TrainConfig(),
    metrics_path=None,
) -> TrainResult:
    """Fit ``model`` on ``train``; keep the parameters of the best validation epoch.

    Raises :class:`TrainingError` when a loss or intermediate value stops
    being finite.
    """
    if model.task != train.task:
        raise ConfigError(f"model task {model.task!r} does not match data task {train.task!r}")
    start = time.perf_counter()
    lr = model.learning_rate
    state = AdamState()
    train_curve: List[float] = []
    val_curve: List[float] = []
    best_snapshot = model.snapshot()
    best_epoch = -1
    metrics = open(metrics_path, "w") if metrics_path else None
    try:
        for epoch in range(config.epochs):
            total, seen = 0.0, 0
            for batch in iterate_batches(train, config.batch_size, config.seed, epoch):
                try:
                    tape, _, loss = model.loss(batch)
                    grads = backprop(tape, loss)
                except (TensorError, FloatingPointError) as exc:
                    raise TrainingError(f"epoch {epoch + 1}: {exc}") from exc
                adam_update(model.params, grads, state, lr)
                total += float(loss.value[0]) * len(batch)
                tape.release()
                seen += len(batch)
            try:
                score = evaluate_metric(model, val, config.eval_batch_size)
            except (TensorError, FloatingPointError) as exc:
                raise TrainingError(f"epoch {epoch + 1} validation: {exc}") from exc
            if not math.isfinite(score):
                raise TrainingError(f"epoch {epoch + 1}: validation score is not finite")
            train_curve.append(total / seen)
            val_curve.append(score)
            if best_epoch < 0 or score < val_curve[best_epoch]:
                best_epoch = epoch
                best_snapshot = model.snapshot()
            if metrics:
                metrics.write(json.dumps({"epoch": epoch + 1, "train_loss": train_curve[-1], "val_score": score}) + "\n")
            logger.debug("epoch %d train %.6f val %.6f", epoch + 1, train_curve[-1], score)
            if early_stop_update(val_curve, config.early_stop_patience):
                break
    finally:
        if metrics:
            metrics.close()
    model.restore(best_snapshot)
    test_score = None
    if test is not None and len(test):
        try:
            test_score = evaluate_metric(model, test, config.eval_batch_size)
        except (TensorError, FloatingPointError) as exc:
            raise TrainingError(f"test evaluation: {exc}") from exc
    return TrainResult(
        train_curve, val_curve, val_curve[best_epoch], best_epoch, test_score,
        best_snapshot, time.perf_counter() - start,
    )
