import math

import numpy as np
import pytest
from scipy.stats import norm

from recsearch.space import Bool, Choice, Fixed, FloatRange, HyperSpace, IntRange, fingerprint
from recsearch.tuners import (
    COMPLETED,
    FAILED,
    BudgetExhausted,
    GaussianProcess,
    Oracle,
    SpaceExhausted,
    best_so_far,
    expected_improvement,
    gp_fit_predict,
    mutate,
    n_random_seeds,
    next_trial_bayesian,
    next_trial_greedy,
    next_trial_random,
    run_search,
)


def five_hp_space():
    s = HyperSpace()
    s.declare("lr", FloatRange(1e-4, 1e-1, log=True))
    s.declare("units", Choice([16, 32, 64, 128]))
    s.declare("layers", IntRange(1, 3))
    s.declare("flag", Bool())
    s.declare("mode", Choice(["a", "b", "c"]))
    return s


def quadratic_space():
    s = HyperSpace()
    s.declare("x", FloatRange(0.0, 1.0))
    return s


def quadratic(a):
    return (a["x"] - 0.3) ** 2


def run(oracle, tuner, objective, n):
    for _ in range(n):
        t = tuner(oracle)
        oracle.start(t.id)
        oracle.report_completion(t.id, objective(t.assignment))
    return oracle


# --- oracle --------------------------------------------------------------


def test_best_tracking_first_wins_and_failures():
    o = Oracle(five_hp_space(), max_trials=5, seed=0)
    a = next_trial_random(o)
    o.start(a.id)
    o.report_completion(a.id, 0.5)
    assert o.best_id == a.id
    b = next_trial_random(o)
    o.start(b.id)
    o.report_completion(b.id, 0.5)
    assert o.best_id == a.id
    c = next_trial_random(o)
    o.start(c.id)
    o.report_completion(c.id, failed=True)
    assert o.best_id == a.id and o.trials[c.id].status == FAILED
    assert o.trials[c.id].rank_score == math.inf
    d = next_trial_random(o)
    o.start(d.id)
    o.report_completion(d.id, 0.1)
    assert o.best_id == d.id and o.trials[d.id].status == COMPLETED


def test_report_requires_known_running_trial():
    o = Oracle(five_hp_space(), seed=0)
    t = next_trial_random(o)
    with pytest.raises(ValueError):
        o.report_completion(t.id, 1.0)
    with pytest.raises(KeyError):
        o.report_completion(99, 1.0)


def test_trial_ids_increase_and_budget_is_enforced():
    o = Oracle(five_hp_space(), max_trials=3, seed=1)
    ids = [next_trial_random(o).id for _ in range(3)]
    assert ids == [1, 2, 3]
    with pytest.raises(BudgetExhausted):
        next_trial_random(o)


def test_pigeonhole_on_two_value_space():
    s = HyperSpace()
    s.declare("c", Choice(["x", "y"]))
    o = Oracle(s, max_trials=10, seed=0)
    t1, t2 = next_trial_random(o), next_trial_random(o)
    assert t1.assignment != t2.assignment
    with pytest.raises(SpaceExhausted):
        next_trial_random(o)


def test_random_dedup_and_determinism():
    o1 = Oracle(five_hp_space(), max_trials=10, seed=42)
    o2 = Oracle(five_hp_space(), max_trials=10, seed=42)
    seq1 = [next_trial_random(o1).assignment for _ in range(10)]
    seq2 = [next_trial_random(o2).assignment for _ in range(10)]
    assert seq1 == seq2
    fps = [fingerprint(a) for a in seq1]
    # brute-force pairwise comparison, independent of the oracle's set
    assert all(fps[i] != fps[j] for i in range(10) for j in range(i + 1, 10))


def test_pending_trials_participate_in_dedup():
    s = HyperSpace()
    s.declare("c", Choice([1, 2, 3]))
    o = Oracle(s, max_trials=3, seed=0)
    pending = [next_trial_random(o) for _ in range(3)]
    assert len({t.assignment["c"] for t in pending}) == 3


def test_replay_restores_state():
    space = five_hp_space()
    o = run(Oracle(space, max_trials=6, seed=3), next_trial_random, lambda a: a["lr"], 4)
    records = [{"trial": t.id, "assignment": t.assignment, "score": t.score} for t in o.trials.values()]
    records[1]["score"] = None
    r = Oracle(space, max_trials=6, seed=3)
    r.replay(records)
    assert len(r.trials) == 4 and r.trials[2].status == FAILED
    expected_best = min((rec for rec in records if rec["score"] is not None), key=lambda rec: rec["score"])
    assert r.best_id == expected_best["trial"]
    t = next_trial_random(r)
    assert t.id == 5 and not any(t.assignment == rec["assignment"] for rec in records)


# --- greedy --------------------------------------------------------------


def test_greedy_without_history_matches_random():
    o1 = Oracle(five_hp_space(), seed=9)
    o2 = Oracle(five_hp_space(), seed=9)
    assert next_trial_greedy(o1).assignment == next_trial_random(o2).assignment


def test_greedy_single_hp_always_mutates():
    s = HyperSpace()
    s.declare("x", FloatRange(0.0, 1.0))
    rng = np.random.default_rng(0)
    for _ in range(100):
        new, n = mutate(s, {"x": 0.5}, rng)
        assert n == 1 and new["x"] != 0.5


def _k_space(k):
    s = HyperSpace()
    for i in range(k):
        s.declare(f"h{i}", Choice([0, 1, 2]))
    return s


@pytest.mark.parametrize("k", [1, 2, 5, 10, 25])
def test_greedy_mutation_count_matches_exact_expectation(k):
    # independent p=0.2 draws plus the at-least-one rule: E = 0.2k + 0.8^k
    s = _k_space(k)
    base = {f"h{i}": 0 for i in range(k)}
    rng = np.random.default_rng(k)
    counts = [mutate(s, base, rng)[1] for _ in range(10_000)]
    expected = 0.2 * k + 0.8**k
    assert abs(np.mean(counts) - expected) <= 0.05 * expected


@pytest.mark.parametrize("k", [1, 25])
def test_greedy_mutation_count_near_max_one_point_two_k(k):
    s = _k_space(k)
    base = {f"h{i}": 0 for i in range(k)}
    rng = np.random.default_rng(100 + k)
    counts = [mutate(s, base, rng)[1] for _ in range(10_000)]
    target = max(1.0, 0.2 * k)
    assert abs(np.mean(counts) - target) <= 0.05 * target


def test_greedy_mutates_the_best_and_reresolves_conditions():
    s = HyperSpace()
    s.declare("kind", Choice(["a", "b"]))
    s.declare("a/n", IntRange(1, 50), ("kind", "a"))
    s.declare("b/n", IntRange(1, 50), ("kind", "b"))
    o = Oracle(s, max_trials=50, seed=5)
    run(o, next_trial_random, lambda a: 0.0 if a["kind"] == "a" else 1.0, 2)
    for _ in range(20):
        t = next_trial_greedy(o)
        s.validate(t.assignment)
        o.start(t.id)
        o.report_completion(t.id, 1.0)


# --- gaussian process ----------------------------------------------------


def direct_gp(X, y, xq, noise=1e-4):
    """Plain-formula GP used as the oracle: mean via a dense solve."""
    ym, ys = y.mean(), y.std() or 1.0
    z = (y - ym) / ys
    d = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))
    iu = np.triu_indices(len(X), 1)
    ell = np.median(d[iu]) if len(X) > 1 and np.median(d[iu]) > 0 else 1.0
    k = lambda A, B: np.exp(-((A[:, None, :] - B[None, :, :]) ** 2).sum(-1) / (2 * ell**2))
    K = k(X, X) + (noise + 1e-8) * np.eye(len(X))
    ks = k(X, xq)
    mu = ks.T @ np.linalg.solve(K, z)
    var = 1.0 - np.sum(ks * np.linalg.solve(K, ks), axis=0)
    return ym + ys * mu, ys * np.sqrt(np.maximum(var, 0))


def test_gp_matches_direct_formula(rng):
    X = rng.random((8, 3))
    y = rng.normal(size=8)
    xq = rng.random((5, 3))
    mu, sd = gp_fit_predict(X, y, xq)
    mu0, sd0 = direct_gp(X, y, xq)
    np.testing.assert_allclose(mu, mu0, atol=1e-8)
    np.testing.assert_allclose(sd, sd0, atol=1e-6)


def test_gp_interpolates_training_points(rng):
    X = rng.random((6, 2))
    y = rng.normal(size=6)
    mu, sd = gp_fit_predict(X, y, X)
    assert np.all(np.abs(mu - y) <= 0.05 * y.std())
    assert np.all(sd < 0.05 * y.std())


def test_gp_far_query_reverts_to_prior():
    mu, sd = gp_fit_predict(np.array([[0.0]]), np.array([3.0]), np.array([[100.0]]))
    assert mu[0] == pytest.approx(3.0)
    assert sd[0] == pytest.approx(1.0)
    X = np.array([[0.0], [1.0]])
    y = np.array([1.0, 3.0])
    mu, sd = gp_fit_predict(X, y, np.array([[1e3]]))
    assert mu[0] == pytest.approx(2.0) and sd[0] == pytest.approx(y.std())


def test_gp_survives_duplicate_points():
    X = np.array([[0.2, 0.4]] * 3 + [[0.9, 0.1]])
    y = np.array([1.0, 1.0, 1.0, 2.0])
    mu, sd = GaussianProcess(X, y).predict(X)
    assert np.all(np.isfinite(mu)) and np.all(sd >= 0)


def test_gp_length_scale_is_median_distance():
    X = np.array([[0.0], [1.0], [3.0]])
    assert GaussianProcess(X, np.zeros(3)).length_scale == 2.0
    assert GaussianProcess(np.zeros((3, 1)), np.arange(3.0)).length_scale == 1.0


# --- expected improvement ------------------------------------------------


def test_ei_examples():
    assert expected_improvement(0.5, 0.0, 0.5) == 0.0
    assert expected_improvement(0.5, 1.0, 0.5) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-12)
    assert expected_improvement(0.5, 1.0, 0.5) == pytest.approx(0.398942, abs=1e-6)
    assert expected_improvement(-0.5, 0.0, 0.5) == 1.0


def test_ei_matches_closed_form_and_is_nonnegative(rng):
    mu = rng.normal(size=500)
    sigma = rng.exponential(size=500)
    best = 0.2
    z = (best - mu) / sigma
    oracle = (best - mu) * norm.cdf(z) + sigma * norm.pdf(z)
    ei = expected_improvement(mu, sigma, best)
    np.testing.assert_allclose(ei, oracle, atol=1e-12)
    assert np.all(ei >= 0)


def test_ei_increases_with_sigma_at_best():
    grid = np.linspace(0.0, 5.0, 51)
    ei = expected_improvement(np.zeros_like(grid), grid, 0.0)
    assert np.all(np.diff(ei) > 0)


# --- bayesian ------------------------------------------------------------


def test_seed_schedule():
    assert n_random_seeds(quadratic_space()) == 3
    s = HyperSpace()
    for i in range(20):
        s.declare(f"c{i}", Choice([0, 1]))
    assert s.dimension == 40 and n_random_seeds(s) == 7


def test_first_trials_are_random_seeds():
    o_bo = run(Oracle(five_hp_space(), max_trials=10, seed=4), next_trial_bayesian, lambda a: a["lr"], 3)
    o_rand = run(Oracle(five_hp_space(), max_trials=10, seed=4), next_trial_random, lambda a: a["lr"], 3)
    assert [t.assignment for t in o_bo.trials.values()] == [t.assignment for t in o_rand.trials.values()]


def test_bayesian_exhausts_small_space():
    s = HyperSpace()
    s.declare("c", Choice([1, 2, 3, 4]))
    o = run(Oracle(s, max_trials=10, seed=0), next_trial_bayesian, lambda a: a["c"], 4)
    with pytest.raises(SpaceExhausted):
        next_trial_bayesian(o)


def test_bayesian_excludes_failed_trials_from_design():
    s = quadratic_space()
    o = Oracle(s, max_trials=10, seed=0)
    for i in range(4):
        t = next_trial_bayesian(o)
        o.start(t.id)
        o.report_completion(t.id, failed=i == 1, score=None if i == 1 else quadratic(t.assignment))
    t = next_trial_bayesian(o)
    assert 0.0 <= t.assignment["x"] <= 1.0


@pytest.mark.parametrize("tuner", ["random", "greedy", "bayesian"])
def test_best_so_far_is_monotone_and_search_is_reproducible(tuner):
    a = run_search(five_hp_space(), lambda x: math.log10(x["lr"]) ** 2 + x["layers"], tuner, 12, seed=7)
    b = run_search(five_hp_space(), lambda x: math.log10(x["lr"]) ** 2 + x["layers"], tuner, 12, seed=7)
    curve = best_so_far(a)
    assert all(x >= y for x, y in zip(curve, curve[1:]))
    assert [(t.assignment, t.score) for t in a.trials.values()] == [(t.assignment, t.score) for t in b.trials.values()]
    assert len({fingerprint(t.assignment) for t in a.trials.values()}) == 12


def test_run_search_marks_raising_objective_failed():
    def objective(a):
        if a["flag"]:
            raise RuntimeError("boom")
        return a["lr"]

    o = run_search(five_hp_space(), objective, "random", 8, seed=2)
    assert any(t.status == FAILED for t in o.trials.values())
    assert o.best.status == COMPLETED


def test_fixed_only_space_stops_after_one_trial():
    s = HyperSpace()
    s.declare("d", Fixed(64))
    o = run_search(s, lambda a: 1.0, "greedy", 5, seed=0)
    assert len(o.trials) == 1


@pytest.mark.slow
def test_bayesian_beats_random_on_quadratic():
    wins = 0
    for seed in range(10):
        bo = best_so_far(run_search(quadratic_space(), quadratic, "bayesian", 20, seed))[19]
        rs = best_so_far(run_search(quadratic_space(), quadratic, "random", 20, seed))[19]
        wins += bo < rs
    assert wins >= 7
