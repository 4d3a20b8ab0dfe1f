"""Interior-point engines for the fixed-support barycenter LP.

``pd_step`` / ``solve_fixed_support`` implement a Mehrotra predictor-corrector
method; ``primal_newton_direction`` / ``primal_barrier_solve`` implement a
primal log-barrier path-following method whose iterates stay exactly feasible,
which is what the free-support loop needs when the cost vector moves.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import lp_model as lp
from .measures import BarycenterProblem
from .normal_kernel import DENSE, DENSE_CAP, KernelError, factorize

log = logging.getLogger(__name__)


@dataclass
class SolveOptions:
    tol: float = 5e-5
    max_iter: int = 200
    step_fraction: float = 0.995
    centering_exponent: float = 3.0
    kernel: str = "auto"
    feas_tol: float = 1e-9
    # primal barrier engine
    primal_step_fraction: float = 0.99
    mu_factor: float = 0.3
    decrement_threshold: float = 0.5
    mu_min_rel: float = 1e-9
    primal_max_iter: int = 1000

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if not 0 < self.step_fraction < 1 or not 0 < self.primal_step_fraction < 1:
            raise ValueError("step fractions must lie in (0, 1)")


@dataclass
class IpmState:
    x: np.ndarray
    lam: np.ndarray
    s: Optional[np.ndarray]
    mu: float
    iteration: int = 0
    primal_res: float = float("nan")
    dual_res: float = float("nan")
    gap: float = float("nan")
    kernel: str = ""
    converged: bool = False
    stalled: bool = False
    history: list = field(default_factory=list)


def relative_gap(b, lam, c, x) -> float:
    bl, cx = float(b @ lam), float(c @ x)
    return (bl - cx) / (1.0 + abs(bl) + abs(cx))


def max_step(v, dv) -> float:
    """Largest alpha with v + alpha dv >= 0 (inf if dv >= 0)."""
    neg = dv < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))


def _factorize(geom, d, kernel):
    try:
        return factorize(geom, d, kernel)
    except KernelError as err:
        if kernel != DENSE and geom.n_row_bar <= DENSE_CAP:
            log.warning("kernel %s failed (%s); retrying with dense", kernel, err)
            return factorize(geom, d, DENSE)
        raise


def _range_correct(geom, fac, d, dx, target):
    """Remove the error in ``A dx = target`` left by an inexact normal solve,
    moving along ``D A^T`` so the factorization can be reused."""
    r = target - lp.apply_Abar(geom, dx)
    scale = 1.0 + np.linalg.norm(target) + np.linalg.norm(lp.apply_Abar(geom, np.abs(dx)))
    if np.linalg.norm(r) > 1e-14 * scale:
        dx = dx + d * lp.apply_Abar_T(geom, fac.solve(r, refine=False))
    return dx


def initial_point_pd(geom: lp.LpGeometry, b_bar, c) -> IpmState:
    b_bar = np.asarray(b_bar, dtype=float)
    w = np.full(geom.m, 1.0 / geom.m)
    plans = []
    for t, mt in enumerate(geom.m_list):
        a = b_bar[geom.row_offset(t):geom.row_offset(t) + mt]
        if np.any(a <= 0):
            raise ValueError(f"measure {t} has a zero weight; clamp weights first")
        plans.append(np.outer(w, a))
    x = geom.pack(plans, w)
    lam = np.zeros(geom.n_row_bar)
    s = np.maximum(c - lp.apply_Abar_T(geom, lam), 1.0)
    # x is left untouched so the start stays exactly feasible
    s = np.maximum(s, 1e-2 * s.mean())
    return _measure(IpmState(x, lam, s, float(x @ s) / geom.n_col), geom, b_bar, c)


def _measure(state, geom, b, c):
    rp = b - lp.apply_Abar(geom, state.x)
    state.primal_res = float(np.linalg.norm(rp) / (1.0 + np.linalg.norm(b)))
    if state.s is not None:
        rd = c - lp.apply_Abar_T(geom, state.lam) - state.s
        state.dual_res = float(np.linalg.norm(rd) / (1.0 + np.linalg.norm(c)))
        state.mu = float(state.x @ state.s) / geom.n_col
    state.gap = relative_gap(b, state.lam, c, state.x)
    return state


def pd_step(state: IpmState, geom, b, c, options: SolveOptions = None, kernel=None):
    """One Mehrotra predictor-corrector iteration; returns a new state."""
    opts = options or SolveOptions()
    kernel = kernel or opts.kernel
    x, lam, s = state.x, state.lam, state.s
    n = geom.n_col
    rp = b - lp.apply_Abar(geom, x)
    rd = c - lp.apply_Abar_T(geom, lam) - s
    mu = float(x @ s) / n
    d = x / s
    fac = _factorize(geom, d, kernel)

    def direction(rc):
        rhs = rp + lp.apply_Abar(geom, d * rd - rc / s)
        dlam = fac.solve(rhs)
        ds = rd - lp.apply_Abar_T(geom, dlam)
        dx = rc / s - d * ds
        return _range_correct(geom, fac, d, dx, rp), dlam, ds

    dx_a, _, ds_a = direction(-x * s)
    ap = min(1.0, max_step(x, dx_a))
    ad = min(1.0, max_step(s, ds_a))
    mu_aff = float((x + ap * dx_a) @ (s + ad * ds_a)) / n
    sigma = (mu_aff / mu) ** opts.centering_exponent if mu > 0 else 0.0

    dx, dlam, ds = direction(sigma * mu - x * s - dx_a * ds_a)
    ap = min(1.0, opts.step_fraction * max_step(x, dx))
    ad = min(1.0, opts.step_fraction * max_step(s, ds))
    new = IpmState(x + ap * dx, lam + ad * dlam, s + ad * ds, mu,
                   iteration=state.iteration + 1, kernel=fac.kind,
                   history=state.history)
    _measure(new, geom, b, c)
    new.history.append((new.iteration, new.mu, new.primal_res, new.dual_res, new.gap))
    return new


def pd_converged(state: IpmState, opts: SolveOptions) -> bool:
    return (abs(state.gap) < opts.tol and state.primal_res < opts.feas_tol
            and state.dual_res < opts.tol)


def solve_fixed_support(problem: BarycenterProblem, X, options: SolveOptions = None,
                        callback: Callable = None) -> lp.BarycenterSolution:
    """Predictor-corrector solve of the LP with support ``X`` held fixed."""
    opts = options or SolveOptions()
    X = np.asarray(getattr(X, "points", X), dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != problem.m:
        raise ValueError(f"support has {X.shape[0]} points, problem expects m={problem.m}")
    if problem.m == 1:
        return lp.single_atom_solution(problem, X[0])
    t0 = time.perf_counter()
    geom = lp.build_geometry(problem)
    b = lp.b_bar(geom, problem.measures)
    c = lp.cost_vector(geom, X, problem.measures)
    state = initial_point_pd(geom, b, c)
    best = state
    kernel = opts.kernel
    while not pd_converged(state, opts) and state.iteration < opts.max_iter:
        try:
            new, kernel = guarded_pd_step(state, geom, b, c, opts, kernel)
        except KernelError as err:
            log.warning("stopping at iteration %d: %s", state.iteration, err)
            break
        if lost_feasibility(new, state, opts):
            log.warning("stopping at iteration %d: step lost primal feasibility "
                        "(%.2e)", new.iteration, new.primal_res)
            break
        state = new
        if callback is not None:
            callback(state)
        if _score(state) < _score(best):
            best = state
    converged = pd_converged(state, opts)
    final = state if converged else best
    sol = lp.make_solution(geom, final.x, X, problem.measures, gap=final.gap,
                           iterations=state.iteration, converged=converged)
    sol.info = {"kernel": final.kernel, "time": time.perf_counter() - t0,
                "lam": final.lam, "primal_res": final.primal_res,
                "dual_res": final.dual_res}
    return sol


def lost_feasibility(new: IpmState, old: IpmState, opts: SolveOptions) -> bool:
    """True when a step broke ``A x = b`` beyond what the previous iterate had."""
    return new.primal_res > max(100 * old.primal_res, opts.feas_tol)


def guarded_pd_step(state, geom, b, c, opts, kernel):
    """One predictor-corrector step, redone with the dense kernel when the
    block kernels lose primal feasibility.

    The block kernels' backward error is amplified as ``x/s`` spreads out near
    the optimum; the dense Cholesky is backward stable. Returns the new state
    and the kernel to use from now on.
    """
    new = pd_step(state, geom, b, c, opts, kernel)
    if (lost_feasibility(new, state, opts) and new.kernel != DENSE
            and geom.n_row_bar <= DENSE_CAP):
        log.info("switching to the dense kernel at iteration %d", new.iteration)
        kernel = DENSE
        new = pd_step(state, geom, b, c, opts, kernel)
    return new, kernel


def _score(state):
    return max(abs(state.gap), state.primal_res, state.dual_res)


# ---------------------------------------------------------------- primal engine

def primal_newton_direction(x, geom, c, mu, kernel="auto", b=None, return_lam=False):
    """Newton step for ``min c^T x - mu sum(log x)`` on ``A x = b``.

    Without ``b`` the step lies in the null space of A. With ``b`` it also
    removes any residual ``b - A x`` accumulated by roundoff.
    """
    x = np.asarray(x, dtype=float)
    d = x * x
    fac = _factorize(geom, d, kernel)
    Ax = lp.apply_Abar(geom, x)
    target = np.zeros(geom.n_row_bar) if b is None else np.asarray(b) - Ax
    rhs = lp.apply_Abar(geom, d * c) + mu * (target - Ax)
    lam = fac.solve(rhs)
    p = x + d * (lp.apply_Abar_T(geom, lam) - c) / mu
    p = _range_correct(geom, fac, d, p, target)
    if return_lam:
        return p, lam, fac.kind
    return p


def barrier_value(c, x, mu) -> float:
    return float(c @ x - mu * np.sum(np.log(x)))


def primal_barrier_solve(geom, c, x_start, mu0, options: SolveOptions = None,
                         support_callback: Callable = None, hold_support: int = 0,
                         mu_min: float = None, b=None) -> IpmState:
    """Path-following on the log barrier from a strictly feasible ``x_start``.

    ``support_callback(x)`` is called after every step (except the first
    ``hold_support`` steps) and may return a new cost vector.

    The block kernels have a backward error around 1e-9 relative, which the
    ``1/mu`` in the Newton step amplifies once ``mu`` is tiny. A step that
    breaks ``A x = b`` is therefore redone with the dense kernel when that fits
    under the size cap; otherwise the path stops at the last feasible iterate.
    ``gap`` reports the barrier bound ``n mu / (1 + |c^T x|)``.
    """
    opts = options or SolveOptions()
    x = np.array(x_start, dtype=float)
    if np.any(x <= 0):
        raise ValueError("primal barrier start must be strictly positive")
    c = np.asarray(c, dtype=float)
    b = lp.apply_Abar(geom, x) if b is None else np.asarray(b, dtype=float)
    n = geom.n_col
    bnorm = 1.0 + np.linalg.norm(b)

    def infeas(v):
        return float(np.linalg.norm(lp.apply_Abar(geom, v) - b) / bnorm)

    if mu_min is None:
        mu_min = opts.mu_min_rel * max(abs(float(c @ x)), 1e-12) / n
    mu = float(mu0)
    state = IpmState(x, np.zeros(geom.n_row_bar), None, mu)
    kernel = opts.kernel
    it = 0
    res = infeas(x)
    while mu >= mu_min and it < opts.primal_max_iter:
        p, lam, kind = primal_newton_direction(x, geom, c, mu, kernel, b=b,
                                               return_lam=True)
        alpha = min(1.0, opts.primal_step_fraction * max_step(x, p))
        limit = max(10 * res, opts.feas_tol)
        if infeas(x + alpha * p) > limit and kind != DENSE and geom.n_row_bar <= DENSE_CAP:
            log.info("switching primal barrier to the dense kernel at mu=%.3e", mu)
            kernel = DENSE
            p, lam, kind = primal_newton_direction(x, geom, c, mu, kernel, b=b,
                                                   return_lam=True)
            alpha = min(1.0, opts.primal_step_fraction * max_step(x, p))
        if alpha < 1e-12:
            state.stalled = True
            log.warning("primal barrier stalled at mu=%.3e", mu)
            break
        x_new = x + alpha * p
        res_new = infeas(x_new)
        if res_new > limit:
            state.stalled = True
            # near the end of the path this is the usual way out; only an early
            # stop (gap bound still above tol) deserves a warning
            early = n * mu / (1.0 + abs(float(c @ x))) >= opts.tol
            (log.warning if early else log.info)(
                "primal barrier stopped at mu=%.3e: step would lose "
                "feasibility (%.2e)", mu, res_new)
            break
        decrement = float(np.linalg.norm(p / x))
        x, res = x_new, res_new
        it += 1
        if support_callback is not None and it > hold_support:
            new_c = support_callback(x)
            if new_c is not None:
                c = np.asarray(new_c, dtype=float)
        if decrement < opts.decrement_threshold:
            mu *= opts.mu_factor
        state.history.append((it, mu, decrement, alpha, float(c @ x)))
        state.lam = lam
        state.kernel = kind
    state.x, state.mu, state.iteration = x, mu, it
    state.gap = n * mu / (1.0 + abs(float(c @ x)))
    state.converged = mu < mu_min or state.gap < opts.tol
    state.primal_res = res
    return state
