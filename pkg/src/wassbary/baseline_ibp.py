"""Iterative Bregman projections for entropically regularized barycenters.

Used as the comparison baseline. The sweep per iteration is

    v_t <- a_t / (K_t^T u_t)
    w   <- geometric mean over t of u_t * (K_t v_t), renormalized
    u_t <- w / (K_t v_t)

with ``K_t = exp(-D_t / (eps * scale))`` and ``scale`` the median of all cost
entries, so that ``eps`` is relative to a typical squared distance. For small
``eps`` the same sweep runs on log potentials.
"""
from __future__ import annotations

import logging
import time

import numpy as np
from scipy.special import logsumexp

from . import lp_model as lp
from .measures import BarycenterProblem, distance_matrix

log = logging.getLogger(__name__)

LOG_DOMAIN_EPS = 0.005


class IbpUnderflowError(FloatingPointError):
    pass


def _pad_costs(X, measures):
    """Stack the cost matrices into an (N, m, m_max) array plus a column mask."""
    D = [distance_matrix(X, mu) for mu in measures]
    m = D[0].shape[0]
    width = max(Dt.shape[1] for Dt in D)
    C = np.zeros((len(D), m, width))
    mask = np.zeros((len(D), width), dtype=bool)
    a = np.zeros((len(D), width))
    for t, (Dt, mu) in enumerate(zip(D, measures)):
        C[t, :, :Dt.shape[1]] = Dt
        mask[t, :Dt.shape[1]] = True
        a[t, :Dt.shape[1]] = mu.weights
    return C, mask, a


def cost_scale(X, measures) -> float:
    """Median of all squared distances; 1 if that median is zero."""
    vals = np.concatenate([distance_matrix(X, mu).ravel() for mu in measures])
    med = float(np.median(vals))
    return med if med > 0 else 1.0


def _rel_change(new, old):
    """||new - old|| / (1 + ||new|| + ||old||), scaled so large entries cannot
    overflow the norms."""
    top = max(np.max(np.abs(new)), np.max(np.abs(old)))
    if not top > 0 or not np.isfinite(top):
        return 0.0 if top == 0 else np.inf
    new, old = new / top, old / top
    return np.linalg.norm(new - old) / (1.0 / top + np.linalg.norm(new) + np.linalg.norm(old))


def v_update(K, u, a, mask):
    """Projection onto the column marginals: ``v_t = a_t / (K_t^T u_t)``.

    After it, ``diag(u_t) K_t diag(v_t)`` has column sums exactly ``a_t``.
    """
    KTu = np.einsum("tij,ti->tj", K, u)
    if np.any((KTu <= 0) & mask):
        raise IbpUnderflowError(
            "kernel underflow: a column of exp(-D/eps) vanished; "
            "use a larger eps or the log-domain variant")
    return np.where(mask, a / np.where(mask, KTu, 1.0), 0.0)


def _sweep_standard(K, a, mask, N, tol, max_iter):
    u = np.ones(K.shape[:2])
    v = mask.astype(float)
    for it in range(1, max_iter + 1):
        v_new = v_update(K, u, a, mask)
        Kv = np.einsum("tij,tj->ti", K, v_new)
        if np.any(Kv <= 0):
            raise IbpUnderflowError(
                "kernel underflow: a row of exp(-D/eps) vanished; "
                "use a larger eps or the log-domain variant")
        logw = np.mean(np.log(u) + np.log(Kv), axis=0)
        w = np.exp(logw - logw.max())
        w /= w.sum()
        u_new = w[None, :] / Kv
        du, dv = _rel_change(u_new, u), _rel_change(v_new, v)
        u, v = u_new, v_new
        if du < tol and dv < tol:
            return u, v, w, it, True
        if not np.all(np.isfinite(u)) or not np.all(np.isfinite(v)):
            raise IbpUnderflowError("scaling vectors overflowed; use the log-domain variant")
    return u, v, w, max_iter, False


def _rel_change_log(lnew, lold):
    """``_rel_change`` of exp(lnew), exp(lold), computed with the largest
    exponent factored out so it cannot overflow."""
    top = max(np.max(lnew), np.max(lold))
    en, eo = np.exp(lnew - top), np.exp(lold - top)
    return np.linalg.norm(en - eo) / (np.exp(-top) + np.linalg.norm(en) + np.linalg.norm(eo))


def _sweep_log(C, a, mask, eps, tol, max_iter):
    """Same sweep on log u and log v.

    The stopping test is the standard sweep's, evaluated without forming u
    and v.
    """
    N, m, _ = C.shape
    neg = np.where(mask[:, None, :], -C / eps, -np.inf)      # log K, padded columns -inf
    loga = np.log(np.where(mask, a, 1.0))    # padded entries are masked out below
    lu = np.zeros((N, m))
    lv = np.where(mask, 0.0, -np.inf)
    for it in range(1, max_iter + 1):
        lv_new = np.where(mask, loga - logsumexp(neg + lu[:, :, None], axis=1), -np.inf)
        lKv = logsumexp(neg + lv_new[:, None, :], axis=2)
        logw = np.mean(lu + lKv, axis=0)
        logw -= logsumexp(logw)
        lu_new = logw[None, :] - lKv
        du, dv = _rel_change_log(lu_new, lu), _rel_change_log(lv_new, lv)
        lu, lv = lu_new, lv_new
        if du < tol and dv < tol:
            return lu, lv, np.exp(logw), it, True
    return lu, lv, np.exp(logw), max_iter, False


def ibp_solve(problem: BarycenterProblem, X, eps: float, tol: float = 1e-8,
              max_iter: int = 100_000, log_domain: bool = None) -> lp.BarycenterSolution:
    """Entropic fixed-support barycenter by iterative Bregman projections.

    Parameters
    ----------
    problem : BarycenterProblem
    X : (m, d) array or SupportSet
    eps : float
        Regularization relative to the median squared distance.
    tol : float
        Threshold on the relative change of both scaling families.
    max_iter : int
    log_domain : bool, optional
        Force or forbid the log-domain sweep; by default it is used when
        ``eps <= 0.005``.

    Returns
    -------
    BarycenterSolution
        Plans ``diag(u_t) K_t diag(v_t)`` after the last u-update, so row
        marginals equal ``w`` and column marginals are only approximate.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    t0 = time.perf_counter()
    ms = problem.measures
    X = np.asarray(getattr(X, "points", X), dtype=float).reshape(problem.m, -1)
    scale = cost_scale(X, ms)
    C, mask, a = _pad_costs(X, ms)
    C = C / scale
    if log_domain is None:
        log_domain = eps <= LOG_DOMAIN_EPS
    if log_domain:
        lu, lv, w, it, ok = _sweep_log(C, a, mask, eps, tol, max_iter)
        logP = lu[:, :, None] + np.where(mask[:, None, :], lv[:, None, :] - C / eps, -np.inf)
        P = np.exp(logP)
    else:
        K = np.where(mask[:, None, :], np.exp(-C / eps), 0.0)
        u, v, w, it, ok = _sweep_standard(K, a, mask, problem.N, tol, max_iter)
        P = u[:, :, None] * K * v[:, None, :]
    plans = [P[t, :, :mu.size].copy() for t, mu in enumerate(ms)]
    if not ok:
        log.info("IBP hit the iteration cap (%d) at eps=%g", max_iter, eps)
    w = w / w.sum()
    sol = lp.BarycenterSolution(
        w=w, plans=plans, support=X, objective=lp.objective(X, plans, ms),
        feasibility_error=lp.feasibility_error(w, plans, ms),
        iterations=it, converged=ok)
    sol.info = {"eps": eps, "cost_scale": scale, "log_domain": bool(log_domain),
                "time": time.perf_counter() - t0}
    return sol


def ibp_free_support(problem: BarycenterProblem, X0, eps: float, outer_iters: int = 10,
                     tol: float = 1e-8, max_iter: int = 100_000,
                     log_domain: bool = None) -> lp.BarycenterSolution:
    """Alternate IBP solves with the closed-form support update; return the
    lowest-objective round."""
    from .maaipm import update_support

    X = np.asarray(getattr(X0, "points", X0), dtype=float).reshape(problem.m, -1)
    best, total = None, 0
    for _ in range(max(1, outer_iters)):
        sol = ibp_solve(problem, X, eps, tol=tol, max_iter=max_iter, log_domain=log_domain)
        total += sol.iterations
        X = update_support(sol.plans, problem.measures, previous=X)
        sol.support = X
        sol.objective = lp.objective(X, sol.plans, problem.measures)
        if best is None or sol.objective < best.objective:
            best = sol
    best.iterations = total
    return best
