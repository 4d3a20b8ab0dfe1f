import numpy as np
import pytest

from conftest import local_min_measure, saddle_measure
from oracles import lp_optimum, random_feasible
from wassbary import lp_model as lp
from wassbary.ipm import (SolveOptions, barrier_value, initial_point_pd, max_step, pd_step,
                          primal_barrier_solve, primal_newton_direction, solve_fixed_support)
from wassbary.measures import BarycenterProblem, DiscreteMeasure, gaussian_measures, kmeans_support
from wassbary.normal_kernel import factorize

# HiGHS optima of the fixed-support LP on gaussian_measures(3, [3, 4, 5], 2,
# default_rng(seed)) with the k-means support (m = 4, seed 0); see oracles.lp_optimum
FROZEN_LP = {7: 1.801929707886232, 8: 6.977799732138297, 9: 6.803518778321532}


def _setup(ms, X):
    X = np.asarray(X, dtype=float).reshape(len(X), -1)
    prob = BarycenterProblem(ms, X.shape[0])
    g = lp.build_geometry(prob)
    return prob, g, lp.b_bar(g, ms), lp.cost_vector(g, X, ms)


def _random_problem(seed, N=3, sizes=(3, 4, 5), m=4):
    ms = gaussian_measures(N, list(sizes), 2, np.random.default_rng(seed))
    return ms, kmeans_support(ms, m, seed=0).points


# ---------------------------------------------------------------- options / start

def test_options_validation():
    with pytest.raises(ValueError):
        SolveOptions(tol=0)
    with pytest.raises(ValueError):
        SolveOptions(step_fraction=1.0)


def test_max_step():
    assert max_step(np.array([1.0, 2.0]), np.array([1.0, 0.0])) == np.inf
    assert max_step(np.array([1.0, 2.0]), np.array([-0.5, -4.0])) == 0.5


def test_initial_point_feasible(rng):
    ms = gaussian_measures(3, [2, 5, 4], 2, rng)
    _, g, b, c = _setup(ms, kmeans_support(ms, 4).points)
    st = initial_point_pd(g, b, c)
    assert np.all(st.x > 0) and np.all(st.s > 0)
    assert np.linalg.norm(lp.apply_Abar(g, st.x) - b) < 1e-12
    assert st.s.min() >= 1e-2 * st.s.mean()


def test_initial_point_saddle(saddle):
    _, g, b, c = _setup([saddle] * 2, [0.0, 1.0])
    assert np.all(initial_point_pd(g, b, c).x > 0)


def test_initial_point_rejects_zero_weight():
    mu = DiscreteMeasure([[0.0], [1.0]], [0.0, 1.0])
    _, g, _, c = _setup([mu], [0.0, 1.0])
    with pytest.raises(ValueError):
        initial_point_pd(g, lp.b_bar(g, [mu], interior=False), c)


# ---------------------------------------------------------------- pd steps

def test_pd_step_reduces_mu():
    mu = DiscreteMeasure([[0.3]], [1.0])
    _, g, b, c = _setup([mu], [0.0, 1.0])
    st0 = initial_point_pd(g, b, c)
    st1 = pd_step(st0, g, b, c)
    assert st1.mu < st0.mu
    assert np.all(st1.x > 0) and np.all(st1.s > 0)


def test_pd_step_stays_interior_near_optimum(local_min):
    _, g, b, c = _setup([local_min] * 2, [0.0, 1.0])
    st = initial_point_pd(g, b, c)
    for _ in range(25):
        st = pd_step(st, g, b, c, SolveOptions(tol=1e-12))
        assert np.all(st.x > 0) and np.all(st.s > 0)


def test_factor_reuse_residual(rng):
    ms, X = _random_problem(7)
    _, g, b, c = _setup(ms, X)
    st = initial_point_pd(g, b, c)
    for _ in range(5):
        st = pd_step(st, g, b, c)
    d = st.x / st.s
    fac = factorize(g, d)
    for _ in range(2):  # predictor and corrector right-hand sides
        f = rng.standard_normal(g.n_row_bar)
        z = fac.solve(f)
        assert np.linalg.norm(fac.apply(z) - f) <= 1e-10 * np.linalg.norm(f)


def test_weak_duality_each_iteration():
    ms, X = _random_problem(8)
    prob, g, b, c = _setup(ms, X)
    seen = []

    def check(st):
        rd = c - lp.apply_Abar_T(g, st.lam) - st.s
        seen.append(b @ st.lam <= c @ st.x + 10 * np.linalg.norm(rd) * np.linalg.norm(st.x) + 1e-12)

    solve_fixed_support(prob, X, callback=check)
    assert seen and all(seen)


# ---------------------------------------------------------------- fixed support

def test_identical_measures_common_support(rng):
    pts = rng.standard_normal((5, 2))
    mu = DiscreteMeasure(pts, rng.dirichlet(np.ones(5)))
    # the gap test is relative to 1 + |objective|, so an optimum of 0 needs a
    # tight stop to show up as < 1e-8
    sol = solve_fixed_support(BarycenterProblem([mu] * 4, 5), pts, SolveOptions(tol=1e-10))
    assert sol.converged
    assert sol.objective < 1e-8
    np.testing.assert_allclose(sol.w, mu.weights, atol=1e-6)


def test_local_min_fixed_support(local_min):
    N = 4
    sol = solve_fixed_support(BarycenterProblem([local_min] * N, 2), [0.0, 1.0],
                              SolveOptions(tol=1e-10))
    assert sol.objective == pytest.approx(0.0099 * N, rel=1e-6)
    assert sol.objective == pytest.approx(lp_optimum([local_min] * N, [0.0, 1.0]), rel=1e-6)


def test_local_min_default_tolerance(local_min):
    sol = solve_fixed_support(BarycenterProblem([local_min] * 3, 2), [0.0, 1.0])
    assert sol.converged and abs(sol.gap) < 5e-5
    assert sol.objective == pytest.approx(0.0297, abs=1e-6)


def test_saddle_fixed_support(saddle):
    sol = solve_fixed_support(BarycenterProblem([saddle] * 2, 2), [0.0, 1.0],
                              SolveOptions(tol=1e-10))
    assert sol.objective == pytest.approx(lp_optimum([saddle] * 2, [0.0, 1.0]), rel=1e-7)
    assert sol.objective == pytest.approx(2.0 / 6.0, rel=1e-7)


@pytest.mark.parametrize("seed", sorted(FROZEN_LP))
def test_random_instances_frozen(seed):
    ms, X = _random_problem(seed)
    sol = solve_fixed_support(BarycenterProblem(ms, 4), X, SolveOptions(tol=1e-10))
    assert sol.objective == pytest.approx(FROZEN_LP[seed], rel=1e-7)
    assert sol.feasibility_error < 1e-9


@pytest.mark.parametrize("kernel", ["slrm", "dlrm", "dense"])
def test_default_solve_meets_contract(kernel):
    ms, X = _random_problem(9)
    sol = solve_fixed_support(BarycenterProblem(ms, 4), X, SolveOptions(kernel=kernel))
    assert sol.converged and abs(sol.gap) < 5e-5
    assert sol.feasibility_error < 1e-7
    assert sol.info["kernel"] == kernel


def test_iteration_count_flat_in_N():
    its = []
    for N in (4, 8, 16, 32):
        ms = gaussian_measures(N, 10, 2, np.random.default_rng(N))
        X = kmeans_support(ms, 10, seed=0).points
        its.append(solve_fixed_support(BarycenterProblem(ms, 10), X).iterations)
    assert max(its) <= 2 * min(its), its


def test_single_support_point(rng):
    ms = gaussian_measures(2, 3, 2, rng)
    sol = solve_fixed_support(BarycenterProblem(ms, 1), np.zeros((1, 2)))
    assert sol.w.tolist() == [1.0]
    assert sol.objective == pytest.approx(sum(mu.weights @ (mu.points ** 2).sum(1) for mu in ms))


def test_support_size_mismatch(rng):
    ms = gaussian_measures(2, 3, 2, rng)
    with pytest.raises(ValueError):
        solve_fixed_support(BarycenterProblem(ms, 3), np.zeros((2, 2)))


def test_iteration_cap_flags_nonconvergence():
    ms, X = _random_problem(7)
    sol = solve_fixed_support(BarycenterProblem(ms, 4), X, SolveOptions(max_iter=2))
    assert not sol.converged and sol.iterations == 2


# ---------------------------------------------------------------- primal engine

def test_newton_direction_in_null_space(rng):
    ms, X = _random_problem(7)
    _, g, b, c = _setup(ms, X)
    x = random_feasible(g, rng, ms)
    p = primal_newton_direction(x, g, c, 0.1)
    assert np.linalg.norm(lp.apply_Abar(g, p)) <= 1e-9 * (1 + np.linalg.norm(p))


def test_newton_direction_vanishes_at_center():
    ms, X = _random_problem(8)
    _, g, b, c = _setup(ms, X)
    mu = 0.05
    x = lp.uniform_point(g, ms)
    for _ in range(60):  # damped Newton to the analytic center with the dense kernel
        p = primal_newton_direction(x, g, c, mu, kernel="dense", b=b)
        x = x + min(1.0, 0.9 * max_step(x, p)) * p
    p = primal_newton_direction(x, g, c, mu, kernel="slrm", b=b)
    assert np.linalg.norm(p / x) < 1e-8


def test_damped_step_decreases_barrier(rng):
    ms, X = _random_problem(9)
    _, g, b, c = _setup(ms, X)
    x = random_feasible(g, rng, ms)
    mu = 0.2
    p = primal_newton_direction(x, g, c, mu)
    alpha = min(1.0, 0.5 * max_step(x, p))
    assert barrier_value(c, x + alpha * p, mu) < barrier_value(c, x, mu)


def test_primal_engine_matches_pd():
    ms, X = _random_problem(7)
    prob, g, b, c = _setup(ms, X)
    ref = solve_fixed_support(prob, X)
    x0 = lp.uniform_point(g, ms)
    infeas = []

    def watch(x):
        infeas.append(np.linalg.norm(lp.apply_Abar(g, x) - b))

    st = primal_barrier_solve(g, c, x0, c @ x0 / g.n_col, support_callback=watch, b=b)
    assert st.converged and not st.stalled
    assert c @ st.x == pytest.approx(ref.objective, rel=5e-5)
    assert max(infeas) < 1e-10
    assert np.all(st.x > 0)
    mus = [h[1] for h in st.history]
    assert all(a >= b_ for a, b_ in zip(mus, mus[1:]))
    assert mus[-1] < mus[0]


def test_primal_engine_rejects_infeasible_start():
    ms, X = _random_problem(7)
    _, g, b, c = _setup(ms, X)
    x = lp.uniform_point(g, ms)
    x[0] = -1.0
    with pytest.raises(ValueError):
        primal_barrier_solve(g, c, x, 1.0)
