import numpy as np
import pytest
from hypothesis import given, strategies as st

from wassbary import lp_model as lp
from wassbary.ipm import solve_fixed_support
from wassbary.maaipm import Schedule, classic_alternation, jump, solve_free_support, update_support
from wassbary.measures import BarycenterProblem, DiscreteMeasure, gaussian_measures, kmeans_support


def _random_plans(rng, m, sizes, d=2):
    ms = gaussian_measures(len(sizes), list(sizes), d, rng)
    plans = [rng.random((m, mt)) * (rng.random((m, mt)) < 0.7) + 1e-3 for mt in sizes]
    return ms, plans


def _local_min_state(measure, N):
    prob = BarycenterProblem([measure] * N, 2)
    g = lp.build_geometry(prob)
    sol = solve_fixed_support(prob, [0.0, 1.0])
    return prob, g, g.pack(sol.plans, sol.w)


# ---------------------------------------------------------------- schedule

@pytest.mark.parametrize("kw", [{"period": 0}, {"jumps": -1}, {"gamma": 0.0}, {"gamma": 1.5}])
def test_schedule_validation(kw):
    with pytest.raises(ValueError):
        Schedule(**kw)


# ---------------------------------------------------------------- support update

def test_update_weighted_mean():
    mu = DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5])
    np.testing.assert_allclose(update_support([np.array([[0.5, 0.5]])], [mu]), [[0.5]])


def test_update_local_min_plans(local_min):
    P = np.array([[0.01, 0.0, 0.0], [0.0, 0.495, 0.495]])
    X = update_support([P, P], [local_min] * 2)
    np.testing.assert_allclose(X.ravel(), [0.0, 1.0], atol=1e-15)


def test_update_concentrated_plans():
    q = np.array([0.3, -1.2])
    mu = DiscreteMeasure(np.vstack([q, [[5.0, 5.0]]]), [0.5, 0.5])
    P = np.array([[0.2, 0.0], [0.3, 0.0], [0.5, 0.0]])
    np.testing.assert_allclose(update_support([P], [mu]), np.tile(q, (3, 1)), atol=1e-15)


def test_update_zero_row_keeps_previous():
    mu = DiscreteMeasure([[0.0], [2.0]], [0.5, 0.5])
    P = np.array([[0.5, 0.5], [0.0, 0.0]])
    X = update_support([P], [mu], previous=np.array([[9.0], [7.0]]))
    np.testing.assert_allclose(X.ravel(), [1.0, 7.0])
    with pytest.raises(ValueError):
        update_support([P], [mu])


@given(st.integers(0, 2**32 - 1))
def test_update_stationarity(seed):
    rng = np.random.default_rng(seed)
    ms, plans = _random_plans(rng, 5, (3, 6, 4))
    X = update_support(plans, ms)
    grad = sum(P.sum(axis=1)[:, None] * X - P @ mu.points for P, mu in zip(plans, ms))
    assert np.abs(grad).max() < 1e-10


@given(st.integers(0, 2**32 - 1))
def test_update_never_increases_objective(seed):
    rng = np.random.default_rng(seed)
    ms, plans = _random_plans(rng, 4, (5, 3))
    X = update_support(plans, ms)
    best = lp.objective(X, plans, ms)
    for _ in range(5):
        assert best <= lp.objective(X + rng.standard_normal(X.shape), plans, ms) + 1e-12


# ---------------------------------------------------------------- jumps

def test_jump_gamma_one_is_uniform_point(local_min):
    _, g, x = _local_min_state(local_min, 3)
    _, x_warm = jump(x, np.array([[0.0], [1.0]]), g, [local_min] * 3, Schedule(gamma=1.0), 0)
    np.testing.assert_array_equal(x_warm, lp.uniform_point(g, [local_min] * 3))


@pytest.mark.parametrize("gamma", [0.01, 0.1, 0.5, 0.99])
def test_jump_warm_start_feasible(gamma, rng):
    ms = gaussian_measures(3, [4, 5, 3], 2, rng)
    prob = BarycenterProblem(ms, 4)
    X = kmeans_support(ms, 4).points
    g = lp.build_geometry(prob)
    sol = solve_fixed_support(prob, X)
    x = g.pack(sol.plans, sol.w)
    X_new, x_warm = jump(x, X, g, ms, Schedule(gamma=gamma), 1)
    assert X_new.shape == X.shape
    assert np.all(x_warm > 0)
    assert np.linalg.norm(lp.apply_Abar(g, x_warm) - lp.b_bar(g, ms)) < 1e-12


def test_jump_reaches_global_basin(local_min):
    # seeds 0..4, first attempt; recorded outcome: every one lands within 0.2 of
    # both global candidates, the requirement is only that one does
    _, g, x = _local_min_state(local_min, 4)
    hits = 0
    for seed in range(5):
        X_new, _ = jump(x, np.array([[0.0], [1.0]]), g, [local_min] * 4, Schedule(seed=seed), 0)
        dist = np.abs(X_new.ravel()[:, None] - np.array([0.9, 1.1])).min(axis=0)
        hits += bool(dist.max() < 0.2)
    assert hits >= 1


def test_jump_is_deterministic(local_min):
    _, g, x = _local_min_state(local_min, 2)
    X = np.array([[0.0], [1.0]])
    a = jump(x, X, g, [local_min] * 2, Schedule(seed=3), 2)
    b = jump(x, X, g, [local_min] * 2, Schedule(seed=3), 2)
    np.testing.assert_array_equal(a[0], b[0])


# ---------------------------------------------------------------- free support

def test_local_min_without_jumps_stays(local_min):
    N = 4
    sol = solve_free_support(BarycenterProblem([local_min] * N, 2), [0.0, 1.0], Schedule(jumps=0))
    assert sol.objective == pytest.approx(0.0099 * N, abs=1e-6)
    np.testing.assert_allclose(np.sort(sol.support.ravel()), [0.0, 1.0], atol=1e-4)


@pytest.mark.slow
def test_local_min_with_jumps_escapes(local_min):
    N = 4
    wins = 0
    for seed in range(20):
        sol = solve_free_support(BarycenterProblem([local_min] * N, 2), [0.0, 1.0],
                                 Schedule(jumps=3, seed=seed))
        wins += sol.objective <= 0.0082 * N
    assert wins >= 16


def test_local_min_single_seed_escapes(local_min):
    N = 2
    sol = solve_free_support(BarycenterProblem([local_min] * N, 2), [0.0, 1.0], Schedule(seed=0))
    assert sol.objective <= 0.0082 * N
    assert sol.info["phases"]["best_stage"].startswith("jump")


def test_saddle_escapes(saddle):
    N = 2
    saddle_value = N / 6.0  # LP value at X = [0, 1]
    sol = solve_free_support(BarycenterProblem([saddle] * N, 2), [0.0, 1.0])
    assert sol.objective < saddle_value - 1e-3
    # global optimum: {0.25, 1.5}, cost 1/24 per measure
    assert sol.objective == pytest.approx(N / 24.0, rel=1e-6)


def test_identical_measures_free(rng):
    pts = rng.standard_normal((4, 2))
    mu = DiscreteMeasure(pts, rng.dirichlet(np.ones(4)))
    sol = solve_free_support(BarycenterProblem([mu] * 3, 4), pts, Schedule(jumps=0))
    assert sol.objective < 1e-6
    np.testing.assert_allclose(np.sort(sol.support, axis=0), np.sort(pts, axis=0), atol=1e-3)


def test_best_trace_monotone_and_feasible(rng):
    ms = gaussian_measures(4, [5, 6, 4, 5], 2, rng)
    sol = solve_free_support(BarycenterProblem(ms, 4), schedule=Schedule(jumps=3, seed=1))
    trace = sol.info["phases"]["trace"]
    bests = [t[2] for t in trace]
    assert all(a >= b for a, b in zip(bests, bests[1:]))
    assert bests[-1] == pytest.approx(sol.objective, rel=1e-12)
    assert sol.feasibility_error < 1e-9
    assert sol.objective == pytest.approx(lp.objective(sol.support, sol.plans, ms), rel=1e-12)


def test_phase_log_contents(rng):
    ms = gaussian_measures(3, 5, 2, rng)
    sol = solve_free_support(BarycenterProblem(ms, 3), schedule=Schedule(jumps=2))
    ph = sol.info["phases"]
    assert ph["phase1_iterations"] > 0 and ph["support_updates"] >= 1
    assert ph["phase2_iterations"] >= 0
    assert len(ph["jumps"]) <= 2
    assert ph["best_objective"] == sol.objective


def test_reduces_to_classic_alternation():
    # jumps off and an unreachable update period: phase 1 updates only after
    # each converged solve, which is the classic alternating scheme
    for seed in range(4):
        ms = gaussian_measures(3, [4, 5, 6], 2, np.random.default_rng(seed))
        X0 = kmeans_support(ms, 3, seed=0).points
        prob = BarycenterProblem(ms, 3)
        a = solve_free_support(prob, X0, Schedule(jumps=0, period=10**6))
        b = classic_alternation(prob, X0)
        assert a.objective == pytest.approx(b.objective, rel=5e-5)
        np.testing.assert_allclose(np.sort(a.support, axis=0), np.sort(b.support, axis=0),
                                   atol=1e-4)


def test_single_support_point_closed_form(rng):
    ms = gaussian_measures(3, 4, 2, rng)
    sol = solve_free_support(BarycenterProblem(ms, 1))
    assert sol.info["phases"]["closed_form"]
    assert sol.w.tolist() == [1.0]


def test_bad_initial_support(rng):
    ms = gaussian_measures(2, 4, 2, rng)
    with pytest.raises(ValueError):
        solve_free_support(BarycenterProblem(ms, 3), np.zeros((2, 2)))
