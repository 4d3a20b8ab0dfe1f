"""Free-support barycenters by alternating interior-point iterations with
closed-form support updates.

The control loop has three stages:

1. **phase 1** -- predictor-corrector iterations on the fixed-support LP, with
   the support recomputed from the current (inexact) plans every ``period``
   iterations;
2. **phase 2** -- primal log-barrier iterations with a support update after
   every step; the primal iterate stays feasible when the cost vector moves,
   so no dual information is needed;
3. **jumps** -- perturb the best support, warm-start from a blend of the best
   plans and the uniform feasible point, and rerun phase 2.

The best (lowest objective) feasible solution seen anywhere is returned.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import lp_model as lp
from .ipm import (SolveOptions, guarded_pd_step, initial_point_pd, lost_feasibility,
                  pd_converged, primal_barrier_solve)
from .measures import (BarycenterProblem, _canonical_order, distance_matrix,
                       kmeans_support, pooled_atoms, weighted_kmeans)
from .normal_kernel import KernelError

log = logging.getLogger(__name__)


@dataclass
class Schedule:
    """Knobs of the alternating scheme.

    Attributes
    ----------
    period : int
        Predictor-corrector iterations between support updates in phase 1.
    switch_threshold : float
        Phase 1 ends once a support update changes the objective by less than
        this relative amount.
    jumps : int
        Jump budget. Jumping stops early after two consecutive attempts that
        fail to improve the best objective by more than ``improve_tol``.
    gamma : float
        Weight of the uniform feasible point in the warm start.
    seed : int
        Base seed for the jump perturbations.
    hold_support : int
        Primal steps taken after a jump before support updates resume, so the
        warm-started plans can adapt to the new support first.
    """

    period: int = 5
    switch_threshold: float = 1e-2
    jumps: int = 3
    gamma: float = 0.1
    seed: int = 0
    hold_support: int = 3
    improve_tol: float = 1e-6
    max_phase1_iter: int = 100

    def __post_init__(self):
        if self.period < 1:
            raise ValueError("period must be >= 1")
        if self.jumps < 0:
            raise ValueError("jump budget must be >= 0")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")


def update_support(plans, measures, previous=None) -> np.ndarray:
    """Minimize the transport cost over the support with the plans fixed.

    Each support point moves to the plan-weighted mean of the atoms it is
    coupled to. Points with zero row mass keep their ``previous`` location.

    Parameters
    ----------
    plans : sequence of (m, m_t) arrays
    measures : sequence of DiscreteMeasure
    previous : (m, d) array, optional
        Required when some row of the plans carries no mass.

    Returns
    -------
    (m, d) ndarray
    """
    plans = [np.asarray(P, dtype=float) for P in plans]
    mass = sum(P.sum(axis=1) for P in plans)
    moment = sum(P @ mu.points for P, mu in zip(plans, measures))
    empty = mass <= 0
    X = np.empty_like(moment)
    X[~empty] = moment[~empty] / mass[~empty, None]
    if np.any(empty):
        if previous is None:
            raise ValueError("a support point has zero mass and no previous location")
        prev = np.asarray(getattr(previous, "points", previous), dtype=float)
        X[empty] = prev.reshape(X.shape)[empty]
    return X


def jump(x_best, X_best, geom: lp.LpGeometry, measures, schedule: Schedule,
         attempt: int):
    """Perturbed support and warm start for one jump attempt.

    The new support averages a fresh weighted k-means reseed ``K`` with random
    points ``R_i`` on the segment between the best support point nearest to
    ``K_i`` and an atom drawn by weight. The warm start is
    ``(1 - gamma) x_best + gamma x_unif``, which stays feasible and interior.

    Returns
    -------
    X_new : (m, d) ndarray
    x_warm : ndarray of length n_col
    """
    seed = schedule.seed * 7919 + attempt + 1
    rng = np.random.default_rng(seed)
    pts, wts = pooled_atoms(measures)
    pts, wts = _canonical_order(pts, wts)
    m = geom.m
    K, _ = weighted_kmeans(pts, wts, min(m, np.unique(pts, axis=0).shape[0]),
                           seed=seed, n_init=3)
    if K.shape[0] < m:
        K = np.vstack([K, pts[rng.choice(len(pts), m - K.shape[0], p=wts / wts.sum())]])
    X_best = np.asarray(X_best, dtype=float).reshape(m, -1)
    nearest = X_best[np.argmin(distance_matrix(K, X_best), axis=1)]
    atoms = pts[rng.choice(len(pts), m, p=wts / wts.sum())]
    theta = rng.uniform(0.0, 1.0, (m, 1))
    R = theta * nearest + (1.0 - theta) * atoms
    X_new = 0.5 * K + 0.5 * R
    x_warm = (1.0 - schedule.gamma) * np.asarray(x_best) + \
        schedule.gamma * lp.uniform_point(geom, measures)
    return X_new, x_warm


@dataclass
class _Best:
    objective: float = np.inf
    x: np.ndarray = None
    X: np.ndarray = None
    stage: str = ""
    trace: list = field(default_factory=list)

    def offer(self, obj, x, X, stage):
        if obj < self.objective:
            self.objective, self.x, self.X, self.stage = obj, x.copy(), X.copy(), stage
        self.trace.append((stage, float(obj), float(self.objective)))


def _polish(geom, x, X, measures):
    """Final support update at fixed plans; never increases the objective."""
    X_new = update_support(geom.plans(x), measures, previous=X)
    return X_new, lp.objective(X_new, geom.plans(x), measures)


def _phase2(geom, x, X, mu0, measures, b, opts, hold=0):
    state_X = [np.array(X, dtype=float)]

    def callback(xk):
        state_X[0] = update_support(geom.plans(xk), measures, previous=state_X[0])
        return lp.cost_vector(geom, state_X[0], measures)

    c = lp.cost_vector(geom, X, measures)
    st = primal_barrier_solve(geom, c, x, mu0, opts, support_callback=callback,
                              hold_support=hold, b=b)
    return st, state_X[0]


def solve_free_support(problem: BarycenterProblem, X0=None, schedule: Schedule = None,
                       options: SolveOptions = None) -> lp.BarycenterSolution:
    """Free-support barycenter by the adaptive alternating interior-point scheme.

    Parameters
    ----------
    problem : BarycenterProblem
    X0 : (m, d) array or SupportSet, optional
        Starting support; weighted k-means on the pooled atoms by default.
    schedule : Schedule, optional
    options : SolveOptions, optional

    Returns
    -------
    BarycenterSolution
        ``info["phases"]`` holds the phase log.
    """
    sched = schedule or Schedule()
    opts = options or SolveOptions()
    ms = problem.measures
    t0 = time.perf_counter()
    if X0 is None:
        X0 = kmeans_support(ms, problem.m, seed=sched.seed)
    X = np.array(getattr(X0, "points", X0), dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape != (problem.m, problem.dim):
        raise ValueError(f"X0 has shape {X.shape}, expected ({problem.m}, {problem.dim})")
    if problem.m == 1:
        # the weighted mean of all atoms is optimal for a single support point
        sol = lp.single_atom_solution(problem)
        sol.info = {"phases": {"closed_form": True}, "time": time.perf_counter() - t0}
        return sol

    geom = lp.build_geometry(problem)
    b = lp.b_bar(geom, ms)
    c = lp.cost_vector(geom, X, ms)
    best = _Best()
    phases = {"phase1_iterations": 0, "support_updates": 0, "switch_iteration": None,
              "phase2_iterations": 0, "jumps": []}

    # phase 1: predictor-corrector with periodic support updates
    state = initial_point_pd(geom, b, c)
    kernel = opts.kernel
    while state.iteration < sched.max_phase1_iter:
        try:
            new, kernel = guarded_pd_step(state, geom, b, c, opts, kernel)
        except KernelError as err:
            log.warning("phase 1 stopped: %s", err)
            break
        if not np.all(new.x > 0) or lost_feasibility(new, state, opts):
            # phase 2 continues from the last feasible iterate
            log.info("phase 1 stopped: step lost primal feasibility")
            break
        state = new
        done = pd_converged(state, opts)
        if state.iteration % sched.period == 0 or done:
            before = float(c @ state.x)
            X = update_support(geom.plans(state.x), ms, previous=X)
            c = lp.cost_vector(geom, X, ms)
            after = float(c @ state.x)
            phases["support_updates"] += 1
            best.offer(after, state.x, X, "phase1")
            if abs(before - after) <= sched.switch_threshold * max(abs(before), 1e-300):
                phases["switch_iteration"] = state.iteration
                break
    phases["phase1_iterations"] = state.iteration
    phases["phase1_objective"] = float(c @ state.x)

    # phase 2: primal barrier with a support update after every step
    x = state.x
    mu0 = max(state.mu, opts.mu_min_rel * abs(float(c @ x)) / geom.n_col)
    st, X = _phase2(geom, x, X, mu0, ms, b, opts)
    X, obj = _polish(geom, st.x, X, ms)
    best.offer(obj, st.x, X, "phase2")
    phases["phase2_iterations"] = st.iteration
    phases["phase2_objective"] = obj
    total_iter = state.iteration + st.iteration
    converged = st.converged

    # jumps
    misses = 0
    for attempt in range(sched.jumps):
        X_new, x_warm = jump(best.x, best.X, geom, ms, sched, attempt)
        c_new = lp.cost_vector(geom, X_new, ms)
        mu0 = 0.1 * float(c_new @ x_warm) / geom.n_col
        prev_best = best.objective
        st, Xj = _phase2(geom, x_warm, X_new, mu0, ms, b, opts, hold=sched.hold_support)
        Xj, obj = _polish(geom, st.x, Xj, ms)
        best.offer(obj, st.x, Xj, f"jump{attempt}")
        total_iter += st.iteration
        improved = obj < prev_best - sched.improve_tol * abs(prev_best)
        phases["jumps"].append({"attempt": attempt, "objective": obj,
                                "iterations": st.iteration, "improved": bool(improved)})
        misses = 0 if improved else misses + 1
        if misses >= 2:
            break

    phases["best_objective"] = best.objective
    phases["best_stage"] = best.stage
    phases["trace"] = best.trace
    sol = lp.make_solution(geom, best.x, best.X, ms, iterations=total_iter,
                           converged=converged)
    sol.info = {"phases": phases, "time": time.perf_counter() - t0}
    return sol


def classic_alternation(problem: BarycenterProblem, X0, options: SolveOptions = None,
                        max_rounds: int = 100, rtol: float = 1e-9):
    """Reference scheme: solve the fixed-support LP to tolerance, update the
    support, repeat until the objective stalls."""
    from .ipm import solve_fixed_support

    X = np.array(getattr(X0, "points", X0), dtype=float).reshape(problem.m, -1)
    best, prev = None, np.inf
    for _ in range(max_rounds):
        sol = solve_fixed_support(problem, X, options)
        X = update_support(sol.plans, problem.measures, previous=X)
        sol.support = X
        sol.objective = lp.objective(X, sol.plans, problem.measures)
        if best is None or sol.objective < best.objective:
            best = sol
        if np.isfinite(prev) and prev - sol.objective <= rtol * max(abs(prev), 1e-300):
            break
        prev = sol.objective
    return best
