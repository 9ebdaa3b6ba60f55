"""Trial bookkeeping and the random, greedy and Bayesian-optimization tuners.

All tuners minimize: the trial score is a validation loss.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy.spatial.distance import cdist, pdist
from scipy.special import ndtr

from .space import Assignment, HyperSpace, fingerprint

logger = logging.getLogger(__name__)

PENDING, RUNNING, COMPLETED, FAILED = "pending", "running", "completed", "failed"


class StopSearch(Exception):
    """No further trial can be proposed."""


class SpaceExhausted(StopSearch):
    pass


class BudgetExhausted(StopSearch):
    pass


class GPNumericalError(ArithmeticError):
    pass


@dataclass
class Trial:
    id: int
    assignment: Assignment
    status: str = PENDING
    score: Optional[float] = None

    @property
    def rank_score(self) -> float:
        if self.status == COMPLETED:
            return self.score
        return math.inf


class Oracle:
    """Search state shared by the tuners: trial history, best trial, dedup set."""

    def __init__(self, space: HyperSpace, max_trials: int = 10, seed: int = 0, max_dup_retries: int = 100):
        self.space = space
        self.max_trials = max_trials
        self.seed = seed
        self.max_dup_retries = max_dup_retries
        self._rng_key: Optional[int] = None
        self._rng: Optional[np.random.Generator] = None
        self.trials: Dict[int, Trial] = {}
        self.best_id: Optional[int] = None
        self._fingerprints: set[str] = set()
        self._next_id = 1

    @property
    def rng(self) -> np.random.Generator:
        """Proposal stream for the next trial, keyed by (seed, trial id).

        Keying by id makes a resumed search draw exactly what an
        uninterrupted one would have.
        """
        if self._rng_key != self._next_id:
            self._rng_key = self._next_id
            self._rng = np.random.default_rng([self.seed, self._next_id])
        return self._rng

    @property
    def best(self) -> Optional[Trial]:
        return None if self.best_id is None else self.trials[self.best_id]

    def completed(self) -> List[Trial]:
        return [t for t in self.trials.values() if t.status == COMPLETED]

    def seen(self, assignment: Assignment) -> bool:
        return fingerprint(assignment) in self._fingerprints

    def has_budget(self) -> bool:
        return len(self.trials) < self.max_trials

    def create_trial(self, assignment: Assignment) -> Trial:
        if not self.has_budget():
            raise BudgetExhausted(f"max_trials={self.max_trials} reached")
        fp = fingerprint(assignment)
        if fp in self._fingerprints:
            raise ValueError("assignment already tried")
        self._fingerprints.add(fp)
        trial = Trial(self._next_id, dict(assignment))
        self.trials[trial.id] = trial
        self._next_id += 1
        return trial

    def start(self, trial_id: int) -> Trial:
        trial = self.trials[trial_id]
        trial.status = RUNNING
        return trial

    def report_completion(self, trial_id: int, score: Optional[float] = None, failed: bool = False) -> Trial:
        trial = self.trials.get(trial_id)
        if trial is None:
            raise KeyError(f"unknown trial id {trial_id}")
        if trial.status != RUNNING:
            raise ValueError(f"trial {trial_id} is {trial.status}, not running")
        if failed or score is None or not math.isfinite(score):
            trial.status = FAILED
            trial.score = None
            return trial
        trial.status = COMPLETED
        trial.score = float(score)
        best = self.best
        if best is None or trial.score < best.score:
            self.best_id = trial.id
        return trial

    def propose_unique(self, draw: Callable[[], Assignment]) -> Trial:
        if not self.has_budget():
            raise BudgetExhausted(f"max_trials={self.max_trials} reached")
        for _ in range(self.max_dup_retries):
            candidate = draw()
            if not self.seen(candidate):
                return self.create_trial(candidate)
        raise SpaceExhausted(f"no unseen assignment after {self.max_dup_retries} draws")

    def replay(self, records) -> None:
        """Rebuild state from trial-log records (dicts with id, assignment, score)."""
        for rec in sorted(records, key=lambda r: r["trial"]):
            trial = self.create_trial(rec["assignment"])
            if trial.id != rec["trial"]:
                raise ValueError(f"trial log is not contiguous at id {rec['trial']}")
            self.start(trial.id)
            score = rec.get("score")
            self.report_completion(trial.id, score, failed=score is None)


# --------------------------------------------------------------------------
# Random search


def next_trial_random(oracle: Oracle) -> Trial:
    return oracle.propose_unique(lambda: oracle.space.sample(oracle.rng))


# --------------------------------------------------------------------------
# Greedy: mutate the best assignment found so far


def mutate(space: HyperSpace, base: Assignment, rng: np.random.Generator, mutation_prob: float = 0.2):
    """Resample each searchable hyperparameter of ``base`` with probability
    ``mutation_prob`` (at least one).  Returns (assignment, number resampled)."""
    names = [n for n in base if space[n].searchable]
    if not names:
        return dict(base), 0
    picked = [n for n in names if rng.random() < mutation_prob]
    if not picked:
        picked = [names[int(rng.integers(len(names)))]]
    new = dict(base)
    for n in picked:
        new[n] = space[n].domain.sample(rng)
    return space.resolve(new, rng), len(picked)


def next_trial_greedy(oracle: Oracle, mutation_prob: float = 0.2) -> Trial:
    best = oracle.best
    if best is None:
        return next_trial_random(oracle)
    return oracle.propose_unique(
        lambda: mutate(oracle.space, best.assignment, oracle.rng, mutation_prob)[0]
    )


# --------------------------------------------------------------------------
# Bayesian optimization


class GaussianProcess:
    """GP regression with an RBF kernel on standardized targets.

    The length scale is the median pairwise distance of the design points
    (1.0 when that is undefined or zero); the signal variance is 1.
    """

    noise = 1e-4
    jitter = 1e-8
    max_jitter = 1e-2

    def __init__(self, X, y):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if X.shape[0] < 1 or X.shape[0] != y.shape[0]:
            raise ValueError("need at least one observation with matching targets")
        self.X = X
        self.y_mean = float(y.mean())
        std = float(y.std())
        self.y_std = std if std > 0 else 1.0
        z = (y - self.y_mean) / self.y_std
        self.length_scale = 1.0
        if X.shape[0] >= 2:
            med = float(np.median(pdist(X)))
            if med > 0:
                self.length_scale = med
        K = self._kernel(X, X)
        n = X.shape[0]
        jitter = self.jitter
        while True:
            try:
                self.L = np.linalg.cholesky(K + (self.noise + jitter) * np.eye(n))
                break
            except np.linalg.LinAlgError:
                jitter *= 10.0
                if jitter > self.max_jitter:
                    raise GPNumericalError("covariance is not positive definite even with jitter 1e-2")
        self.alpha = np.linalg.solve(self.L.T, np.linalg.solve(self.L, z))

    def _kernel(self, A, B):
        d2 = cdist(A, B, "sqeuclidean")
        return np.exp(-d2 / (2.0 * self.length_scale**2))

    def predict(self, Xq):
        Xq = np.atleast_2d(np.asarray(Xq, dtype=np.float64))
        Ks = self._kernel(self.X, Xq)
        mu = Ks.T @ self.alpha
        v = np.linalg.solve(self.L, Ks)
        var = np.maximum(1.0 - np.sum(v * v, axis=0), 0.0)
        return self.y_mean + self.y_std * mu, self.y_std * np.sqrt(var)


def gp_fit_predict(X, y, xq):
    return GaussianProcess(X, y).predict(xq)


def expected_improvement(mu, sigma, best):
    """Expected improvement below ``best`` for a minimization problem."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    gain = best - mu
    safe = np.where(sigma > 0, sigma, 1.0)
    z = gain / safe
    ei = gain * ndtr(z) + safe * np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return np.where(sigma > 0, np.maximum(ei, 0.0), np.maximum(gain, 0.0))


def n_random_seeds(space: HyperSpace, n_seed: int = 3) -> int:
    return max(n_seed, math.ceil(math.sqrt(space.dimension)))


def next_trial_bayesian(oracle: Oracle, n_seed: int = 3, n_candidates: int = 1000) -> Trial:
    space = oracle.space
    done = [t for t in oracle.completed()]
    if len(oracle.trials) < n_random_seeds(space, n_seed) or not done:
        return next_trial_random(oracle)
    if not oracle.has_budget():
        raise BudgetExhausted(f"max_trials={oracle.max_trials} reached")
    X = np.stack([space.vectorize(t.assignment) for t in done])
    y = np.array([t.score for t in done])
    candidates = [space.sample(oracle.rng) for _ in range(n_candidates)]
    try:
        gp = GaussianProcess(X, y)
    except GPNumericalError as exc:
        logger.warning("GP fit failed (%s); proposing a random trial instead", exc)
        return next_trial_random(oracle)
    mu, sigma = gp.predict(np.stack([space.vectorize(c) for c in candidates]))
    ei = expected_improvement(mu, sigma, float(y.min()))
    for i in np.argsort(-ei, kind="stable"):
        if not oracle.seen(candidates[i]):
            return oracle.create_trial(candidates[i])
    raise SpaceExhausted("every candidate assignment has already been tried")


TUNERS: Dict[str, Callable[[Oracle], Trial]] = {
    "random": next_trial_random,
    "greedy": next_trial_greedy,
    "bayesian": next_trial_bayesian,
}


def run_search(
    space: HyperSpace,
    objective: Callable[[Assignment], float],
    tuner: str = "random",
    max_trials: int = 10,
    seed: int = 0,
) -> Oracle:
    """Sequential search of ``objective`` (lower is better); returns the oracle.

    An objective that raises marks its trial failed and the search goes on.
    """
    oracle = Oracle(space, max_trials=max_trials, seed=seed)
    propose = TUNERS[tuner]
    while oracle.has_budget():
        try:
            trial = propose(oracle)
        except StopSearch as exc:
            logger.info("search stopped early: %s", exc)
            break
        oracle.start(trial.id)
        try:
            score = float(objective(trial.assignment))
        except Exception as exc:  # noqa: BLE001
            logger.warning("trial %d failed: %s", trial.id, exc)
            oracle.report_completion(trial.id, failed=True)
        else:
            oracle.report_completion(trial.id, score)
    return oracle


def best_so_far(oracle: Oracle) -> List[float]:
    """Running minimum of the trial scores in id order (failed trials count as inf)."""
    out, best = [], math.inf
    for tid in sorted(oracle.trials):
        best = min(best, oracle.trials[tid].rank_score)
        out.append(best)
    return out
