"""Standard-form LP for the fixed-support barycenter with redundant rows removed.

Variable packing: ``x = (vec(P_1); ...; vec(P_N); w)`` where ``vec`` stacks the
columns of the m x m_t plan ``P_t``. The reduced constraint matrix has rows

* ``P_t^T 1 = a_t`` for every t (M rows),
* rows 2..m of ``P_t 1 - w = 0`` for every t (N(m-1) rows),
* ``1^T w = 1`` (1 row).

The first coupling row of each measure is implied by the others and dropped,
which leaves a full-row-rank system.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .measures import BarycenterProblem, DiscreteMeasure, SupportSet, distance_matrix


@dataclass(frozen=True)
class LpGeometry:
    N: int
    m: int
    m_list: tuple
    d: int = 1

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("need N >= 1 measures")
        if self.m < 2:
            raise ValueError("the reduced LP needs m >= 2; use the single-atom "
                             "closed form for m = 1")
        if len(self.m_list) != self.N or min(self.m_list) < 1:
            raise ValueError("m_list must hold N positive sizes")
        object.__setattr__(self, "m_list", tuple(int(v) for v in self.m_list))
        offsets = np.concatenate([[0], np.cumsum([self.m * mt for mt in self.m_list])])
        col_offsets = np.concatenate([[0], np.cumsum(self.m_list)])
        object.__setattr__(self, "_plan_offsets", offsets)
        object.__setattr__(self, "_col_offsets", col_offsets)

    @property
    def M(self) -> int:
        return int(sum(self.m_list))

    @property
    def n_col(self) -> int:
        return self.m * self.M + self.m

    @property
    def n_row_bar(self) -> int:
        return self.M + self.N * (self.m - 1) + 1

    @property
    def w_offset(self) -> int:
        return self.m * self.M

    def plan_offset(self, t: int) -> int:
        return int(self._plan_offsets[t])

    def row_offset(self, t: int) -> int:
        """Start of the column-sum rows of measure t."""
        return int(self._col_offsets[t])

    def plans(self, x) -> list:
        """Views of the N plans (m x m_t) inside a packed vector."""
        x = np.asarray(x)
        out = []
        for t, mt in enumerate(self.m_list):
            o = self.plan_offset(t)
            out.append(x[o:o + self.m * mt].reshape(mt, self.m).T)
        return out

    def weights(self, x) -> np.ndarray:
        return np.asarray(x)[self.w_offset:]

    def pack(self, plans, w) -> np.ndarray:
        parts = [np.asarray(P, dtype=float).T.ravel() for P in plans]
        parts.append(np.asarray(w, dtype=float).ravel())
        x = np.concatenate(parts)
        if x.size != self.n_col:
            raise ValueError(f"packed length {x.size} != n_col {self.n_col}")
        return x


def build_geometry(problem: BarycenterProblem) -> LpGeometry:
    return LpGeometry(problem.N, problem.m, problem.sizes, problem.dim)


def _check_len(v, n, name):
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise ValueError(f"{name} has shape {v.shape}, expected ({n},)")
    return v


def apply_Abar(geom: LpGeometry, x) -> np.ndarray:
    x = _check_len(x, geom.n_col, "x")
    w = geom.weights(x)
    M, m = geom.M, geom.m
    y = np.empty(geom.n_row_bar)
    for t, P in enumerate(geom.plans(x)):
        r = geom.row_offset(t)
        y[r:r + P.shape[1]] = P.sum(axis=0)
        c = M + t * (m - 1)
        y[c:c + m - 1] = P[1:].sum(axis=1) - w[1:]
    y[-1] = w.sum()
    return y


def apply_Abar_T(geom: LpGeometry, lam) -> np.ndarray:
    lam = _check_len(lam, geom.n_row_bar, "lambda")
    M, m = geom.M, geom.m
    z = np.empty(geom.n_col)
    zw = np.full(m, lam[-1])
    for t, mt in enumerate(geom.m_list):
        r = geom.row_offset(t)
        col = lam[r:r + mt]
        c = M + t * (m - 1)
        row = np.concatenate([[0.0], lam[c:c + m - 1]])
        o = geom.plan_offset(t)
        # entry (i, j) of the plan gets col[j] + row[i]; column-major packing
        z[o:o + m * mt] = (col[:, None] + row[None, :]).ravel()
        zw[1:] -= lam[c:c + m - 1]
    z[geom.w_offset:] = zw
    return z


def sparse_Abar(geom: LpGeometry):
    """Reduced constraint matrix as a CSR matrix (oracles and diagnostics)."""
    from scipy import sparse

    m, M = geom.m, geom.M
    rows, cols = [], []
    for t, mt in enumerate(geom.m_list):
        o, r = geom.plan_offset(t), geom.row_offset(t)
        k = o + np.arange(m * mt)
        j, i = np.divmod(k - o, m)
        rows.append(r + j)
        cols.append(k)
        keep = i > 0
        rows.append(M + t * (m - 1) + i[keep] - 1)
        cols.append(k[keep])
        rows.append(M + t * (m - 1) + np.arange(m - 1))
        cols.append(geom.w_offset + np.arange(1, m))
    rows.append(np.full(m, geom.n_row_bar - 1))
    cols.append(geom.w_offset + np.arange(m))
    vals = [np.ones(len(r)) for r in rows]
    for t in range(geom.N):
        vals[3 * t + 2] = -vals[3 * t + 2]
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(geom.n_row_bar, geom.n_col))


def dense_Abar(geom: LpGeometry) -> np.ndarray:
    """Explicit reduced constraint matrix (test oracle only)."""
    return sparse_Abar(geom).toarray()


def dense_A_full(geom: LpGeometry) -> np.ndarray:
    """Full constraint matrix with all N*m coupling rows (test oracle only)."""
    m, M, N = geom.m, geom.M, geom.N
    A = np.zeros((M + N * m + 1, geom.n_col))
    for t, mt in enumerate(geom.m_list):
        o, r = geom.plan_offset(t), geom.row_offset(t)
        for j in range(mt):
            for i in range(m):
                k = o + j * m + i
                A[r + j, k] = 1.0
                A[M + t * m + i, k] = 1.0
        for i in range(m):
            A[M + t * m + i, geom.w_offset + i] = -1.0
    A[-1, geom.w_offset:] = 1.0
    return A


def b_bar(geom: LpGeometry, measures: Sequence[DiscreteMeasure], interior=True):
    """Right-hand side; ``interior`` clamps tiny weights so a strictly
    positive feasible point exists."""
    parts = [mu.interior_weights() if interior else mu.weights for mu in measures]
    return np.concatenate(parts + [np.zeros(geom.N * (geom.m - 1)), [1.0]])


def b_full(geom: LpGeometry, measures, interior=True):
    parts = [mu.interior_weights() if interior else mu.weights for mu in measures]
    return np.concatenate(parts + [np.zeros(geom.N * geom.m), [1.0]])


def cost_vector(geom: LpGeometry, X, measures: Sequence[DiscreteMeasure]) -> np.ndarray:
    xs = X.points if isinstance(X, SupportSet) else np.asarray(X, dtype=float)
    if xs.ndim == 1:
        xs = xs[:, None]
    if xs.shape[0] != geom.m:
        raise ValueError(f"support has {xs.shape[0]} points, geometry expects {geom.m}")
    parts = [distance_matrix(xs, mu).T.ravel() for mu in measures]
    parts.append(np.zeros(geom.m))
    return np.concatenate(parts)


def uniform_point(geom: LpGeometry, measures, interior=True) -> np.ndarray:
    """The feasible point w = 1/m, P_t = w a_t^T."""
    w = np.full(geom.m, 1.0 / geom.m)
    plans = []
    for mu in measures:
        a = mu.interior_weights() if interior else mu.weights
        plans.append(np.outer(w, a))
    return geom.pack(plans, w)


@dataclass
class BarycenterSolution:
    w: np.ndarray
    plans: list
    support: np.ndarray
    objective: float
    feasibility_error: float
    gap: float = float("nan")
    iterations: int = 0
    converged: bool = True
    info: dict = None

    @property
    def m(self) -> int:
        return self.w.size


def _fro_all(mats) -> float:
    return float(np.sqrt(sum(np.sum(np.square(A)) for A in mats)))


def feasibility_error(w, plans, measures) -> float:
    """Max of the normalized row-marginal, column-marginal and simplex residuals."""
    w = np.asarray(w, dtype=float)
    plan_norm = _fro_all(plans)
    row_res = _fro_all([P.sum(axis=1) - w for P in plans])
    col_res = _fro_all([P.sum(axis=0) - mu.weights for P, mu in zip(plans, measures)])
    a_norm = _fro_all([mu.weights for mu in measures])
    return max(row_res / (1.0 + np.linalg.norm(w) + plan_norm),
               col_res / (1.0 + a_norm + plan_norm),
               abs(w.sum() - 1.0))


def objective(support, plans, measures) -> float:
    return float(sum(np.sum(distance_matrix(support, mu) * P)
                     for P, mu in zip(plans, measures)))


def make_solution(geom: LpGeometry, x, support, measures, **kw) -> BarycenterSolution:
    plans = [P.copy() for P in geom.plans(x)]
    w = geom.weights(x).copy()
    support = np.asarray(support, dtype=float).reshape(geom.m, -1)
    return BarycenterSolution(
        w=w, plans=plans, support=support,
        objective=objective(support, plans, measures),
        feasibility_error=feasibility_error(w, plans, measures), **kw)


def single_atom_solution(problem: BarycenterProblem, support=None) -> BarycenterSolution:
    """Closed form for m = 1: one atom of weight 1 at the pooled mean unless a
    support point is given."""
    ms = problem.measures
    if support is None:
        support = sum(mu.weights @ mu.points for mu in ms) / len(ms)
    support = np.asarray(support, dtype=float).reshape(1, -1)
    plans = [mu.weights[None, :].copy() for mu in ms]
    w = np.ones(1)
    return BarycenterSolution(w=w, plans=plans, support=support,
                              objective=objective(support, plans, ms),
                              feasibility_error=feasibility_error(w, plans, ms),
                              gap=0.0)
