"""Acceptance checks, one test per criterion.

Each test records a one-line detail; the terminal summary prints a
PASS/FAIL/SKIP line per criterion.  Run alone with

    python3 -m pytest tests/test_acceptance.py -v

Data-backed checks look under ``$RECSEARCH_DATA_ROOT`` (default ``data/``):
``ml-1m/ratings.dat`` and ``criteo/train.txt``.
"""

import math
import os
import time
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recsearch import blocks as B
from recsearch.data import split_indices
from recsearch.experiment import DATA_ROOT_ENV, DatasetConfig, ExperimentConfig, run_experiment
from recsearch.recipes import RECIPES, recipe_task
from recsearch.space import FloatRange, HyperSpace
from recsearch.synthetic import logistic_fm_table, rating_table, write_table
from recsearch.tensor import Tape
from recsearch.trainer import TrainConfig
from recsearch.tuners import best_so_far, run_search

from helpers import BLOCK_CASES, block_grad_error

DATA_ROOT = os.environ.get(DATA_ROOT_ENV, os.path.join(os.path.dirname(__file__), "..", "data"))


@pytest.fixture
def report(record_property):
    def record(criterion, detail):
        record_property("criterion", criterion)
        record_property("detail", detail)

    return record


def search(path, tuner, recipe, seed=0, trials=10, epochs=10, out=None, **dataset):
    config = ExperimentConfig(
        dataset=DatasetConfig(path=str(path), **dataset),
        recipe=recipe,
        tuner=tuner,
        max_trials=trials,
        seed=seed,
        training=TrainConfig(epochs=epochs, batch_size=1024, early_stop_patience=1, seed=seed),
    )
    start = time.perf_counter()
    result = run_experiment(config, out)
    return result, time.perf_counter() - start


# --- 1 -------------------------------------------------------------------


def test_criterion_1_gradient_suite(report):
    start = time.perf_counter()
    worst = {}
    for label, block, hp, in_dims in BLOCK_CASES:
        rng = np.random.default_rng(zlib.crc32(label.encode()))
        worst[label] = max(block_grad_error(block, hp, in_dims, rng) for _ in range(10))
    elapsed = time.perf_counter() - start
    label = max(worst, key=worst.get)
    report(
        "1 gradient suite",
        f"{len(worst)} blocks x 10 points, max rel err {worst[label]:.1e} ({label}), {elapsed:.1f}s",
    )
    assert worst[label] <= 1e-4 and elapsed < 60


# --- 2 -------------------------------------------------------------------


def test_criterion_2_fm_oracle(report):
    worst = []

    @settings(max_examples=100, deadline=None, derandomize=True)
    @given(n=st.integers(1, 8), d=st.integers(1, 16), batch=st.integers(1, 5), seed=st.integers(0, 2**32 - 1))
    def check(n, d, batch, seed):
        rng = np.random.default_rng(seed)
        vs = [rng.normal(size=(batch, d)) for _ in range(n)]
        tape = Tape()
        out = B.fm_interaction([tape.constant(v) for v in vs]).value.reshape(-1)
        brute = np.zeros(batch)
        for i in range(n):
            for j in range(i + 1, n):
                for b in range(batch):
                    brute[b] += sum(vs[i][b, k] * vs[j][b, k] for k in range(d))
        err = float(np.max(np.abs(out - brute)))
        worst.append(err)
        assert err <= 1e-10

    try:
        check()
    finally:
        report("2 FM oracle", f"{len(worst)} embedding sets, max abs err {max(worst, default=math.nan):.1e}")


# --- 3 -------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_3_movielens(report, tmp_path):
    path = os.path.join(DATA_ROOT, "ml-1m", "ratings.dat")
    if not os.path.isfile(path):
        report("3 MovieLens-1M", f"not run: {os.path.abspath(path)} is absent")
        pytest.fail(f"MovieLens-1M ratings not found at {path}")
    mf, mf_time = search(path, "random", "mf", out=tmp_path / "mf", format="movielens")
    rp, rp_time = search(path, "bayesian", "autorec_rp", out=tmp_path / "rp", format="movielens")
    mf_test, rp_test = mf.best.test_score, rp.best.test_score
    report(
        "3 MovieLens-1M",
        f"mf/random test MSE {mf_test:.4f} ({mf_time / 60:.1f} min), "
        f"autorec_rp/bayesian {rp_test:.4f} ({rp_time / 60:.1f} min)",
    )
    assert mf_test <= 0.82
    assert mf_time <= 30 * 60
    assert rp_test <= mf_test + 0.02


# --- 4 -------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_4_synthetic_ctr(report, tmp_path):
    rows = 200_000
    gen = logistic_fm_table(rows, n_fields=10, vocab=50, dim=8, seed=0)
    path = tmp_path / "clicks.tsv"
    write_table(gen.table, path)
    bayes = gen.bayes_logloss(split_indices(rows, 0)[2])
    results = {}
    for tuner in ("random", "greedy", "bayesian"):
        res, seconds = search(path, tuner, "autorec_ctr", schema=gen.table.schema)
        results[tuner] = (res.best.test_score, seconds)
    text = ", ".join(f"{t} {s:.4f} (+{s - bayes:.4f}, {sec / 60:.1f} min)" for t, (s, sec) in results.items())
    report("4 synthetic CTR", f"bayes {bayes:.4f}; {text}")
    for score, seconds in results.values():
        assert score - bayes <= 0.02
        assert seconds <= 10 * 60


# --- 5 -------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_5_criteo(report, tmp_path):
    path = os.path.join(DATA_ROOT, "criteo", "train.txt")
    if not os.path.isfile(path):
        report("5 Criteo 500K (optional)", f"skipped: {os.path.abspath(path)} is absent")
        pytest.skip("Criteo sample not supplied")
    res, seconds = search(path, "random", "crossnet", out=tmp_path / "c", format="criteo", max_rows=500_000)
    report("5 Criteo 500K (optional)", f"crossnet/random test logloss {res.best.test_score:.4f} ({seconds / 60:.1f} min)")
    assert res.best.test_score <= 0.50


# --- 6 -------------------------------------------------------------------


def test_criterion_6_bayesian_beats_random(report):
    space = HyperSpace()
    space.declare("x", FloatRange(0.0, 1.0))

    def objective(a):
        return (a["x"] - 0.3) ** 2

    wins = 0
    for seed in range(10):
        bo = best_so_far(run_search(space, objective, "bayesian", 20, seed))[19]
        rs = best_so_far(run_search(space, objective, "random", 20, seed))[19]
        wins += bo < rs
    report("6 tuner head-to-head", f"BO ahead of random at trial 20 in {wins}/10 seeds")
    assert wins >= 7


# --- 7 -------------------------------------------------------------------


def test_criterion_7_determinism(report, tmp_path):
    gen = logistic_fm_table(3000, n_fields=4, vocab=20, seed=1, n_dense=2)
    write_table(gen.table, tmp_path / "clicks.tsv")
    outs = []
    for run in ("a", "b"):
        search(tmp_path / "clicks.tsv", "bayesian", "autorec_ctr", trials=5, epochs=2, out=tmp_path / run, schema=gen.table.schema)
        outs.append((tmp_path / run / "trials.csv").read_bytes())
    report("7 determinism", f"two runs, trials.csv {len(outs[0])} bytes, identical={outs[0] == outs[1]}")
    assert outs[0] == outs[1]


# --- 8 -------------------------------------------------------------------


def test_criterion_8_smoke_matrix(report, tmp_path):
    ratings = rating_table(1000, seed=0)
    clicks = logistic_fm_table(1000, n_fields=6, vocab=20, seed=0, n_dense=4).table
    write_table(ratings, tmp_path / "ratings.dat")
    write_table(clicks, tmp_path / "clicks.tsv")
    start = time.perf_counter()
    bad = []
    for recipe in RECIPES:
        if recipe_task(recipe) == "rating":
            res, _ = search(tmp_path / "ratings.dat", "random", recipe, trials=1, epochs=1, format="movielens")
        else:
            res, _ = search(tmp_path / "clicks.tsv", "random", recipe, trials=1, epochs=1, schema=clicks.schema)
        row = res.rows[0]
        if row.status != "completed" or not (math.isfinite(row.val_score) and math.isfinite(row.test_score)):
            bad.append(recipe)
    elapsed = time.perf_counter() - start
    report("8 smoke matrix", f"{len(RECIPES) - len(bad)}/{len(RECIPES)} recipes finite, {elapsed:.1f}s")
    assert not bad and elapsed < 60


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
