"""Block solvers for the normal equations ``(A D A^T) z = f`` of the barycenter LP.

With rows ordered as in :mod:`wassbary.lp_model`, the matrix has the form::

    [ B1    B2        0     ]
    [ B2^T  B3 + B4   alpha ]
    [ 0     alpha^T   c     ]

where B1 and B3 are diagonal, B2 is block diagonal with one m_t x (m-1) block
per measure, ``B4 = (1 1^T) kron diag(y)`` and ``alpha = -1 kron y``. Two
block eliminations reduce the middle system to ``(A1 + A2)``, with A1 block
diagonal and A2 a Kronecker low-rank term, which is then solved by a Woodbury
correction of size (m-1).

Two ways of handling the per-measure blocks are provided:

``slrm``
    factor ``A_tt = B3_t - B2_t^T B1_t^{-1} B2_t`` ((m-1) x (m-1)) directly.
``dlrm``
    factor only ``K_t = B1_t - B2_t B3_t^{-1} B2_t^T`` (m_t x m_t) and apply
    ``A_tt^{-1}`` through the Woodbury form, which is cheaper when m >> m_t.

Blocks with equal m_t are processed together as stacked arrays.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .lp_model import LpGeometry, apply_Abar, apply_Abar_T, sparse_Abar

log = logging.getLogger(__name__)

SLRM, DLRM, DENSE = "slrm", "dlrm", "dense"
KERNELS = (SLRM, DLRM, DENSE)
DENSE_CAP = 2000
EXPLICIT_CORE_MAX_M = 64
REFINE_THRESHOLD = 1e-9


class KernelError(np.linalg.LinAlgError):
    """A block lost positive definiteness (or the core iteration failed)."""

    def __init__(self, msg, block=None, residual=None):
        super().__init__(msg)
        self.block = block
        self.residual = residual


def select_kernel(m: int, m_list) -> str:
    return SLRM if m * m <= 4 * sum(int(v) ** 2 for v in m_list) else DLRM


def _excl_sum(a, axis):
    """Sum over ``axis`` leaving out each entry, without cancellation."""
    a = np.moveaxis(a, axis, -1)
    fwd = np.cumsum(a, axis=-1)
    bwd = np.cumsum(a[..., ::-1], axis=-1)[..., ::-1]
    out = np.zeros_like(a)
    out[..., 1:] += fwd[..., :-1]
    out[..., :-1] += bwd[..., 1:]
    return np.moveaxis(out, -1, axis)


@dataclass
class _Group:
    """Measures sharing the same m_t, stacked along the first axis."""

    idx: np.ndarray          # measure indices
    mt: int
    D: np.ndarray            # (G, m, mt) plan scalings
    B1: np.ndarray           # (G, mt)
    B3: np.ndarray           # (G, m-1)

    @property
    def B2(self):
        # entry (j, r) = D[r+1, j]
        return np.swapaxes(self.D[:, 1:, :], 1, 2)


@dataclass
class NormalBlocks:
    geom: LpGeometry
    groups: list
    y: np.ndarray
    c: float
    w0: float               # first w-entry of d; equals c - sum(y) exactly

    @property
    def B1diag(self) -> np.ndarray:
        out = np.empty(self.geom.M)
        for g in self.groups:
            for k, t in enumerate(g.idx):
                r = self.geom.row_offset(t)
                out[r:r + g.mt] = g.B1[k]
        return out

    @property
    def B3diag(self) -> np.ndarray:
        out = np.empty((self.geom.N, self.geom.m - 1))
        for g in self.groups:
            out[g.idx] = g.B3
        return out.ravel()

    def B2_block(self, t: int) -> np.ndarray:
        for g in self.groups:
            hit = np.flatnonzero(g.idx == t)
            if hit.size:
                return g.B2[hit[0]]
        raise IndexError(t)

    def Y(self) -> np.ndarray:
        return np.diag(self.y) - np.outer(self.y, self.y) / self.c

    def Y_inv_apply(self, v):
        """Sherman-Morrison: (diag(y) - y y^T / c)^{-1} v."""
        return v / self.y + v.sum(axis=-1, keepdims=True) / self.w0

    def densify(self) -> np.ndarray:
        geom = self.geom
        M, N, m = geom.M, geom.N, geom.m
        M2 = N * (m - 1)
        H = np.zeros((geom.n_row_bar, geom.n_row_bar))
        H[np.arange(M), np.arange(M)] = self.B1diag
        for t in range(N):
            r, c0 = geom.row_offset(t), M + t * (m - 1)
            B2 = self.B2_block(t)
            H[r:r + B2.shape[0], c0:c0 + m - 1] = B2
            H[c0:c0 + m - 1, r:r + B2.shape[0]] = B2.T
        mid = np.diag(self.B3diag) + np.kron(np.ones((N, N)), np.diag(self.y))
        H[M:M + M2, M:M + M2] = mid
        alpha = -np.tile(self.y, N)
        H[M:M + M2, -1] = alpha
        H[-1, M:M + M2] = alpha
        H[-1, -1] = self.c
        return H


def _check_d(geom, d):
    d = np.asarray(d, dtype=float)
    if d.shape != (geom.n_col,):
        raise ValueError(f"scaling has shape {d.shape}, expected ({geom.n_col},)")
    if not np.all(d > 0) or not np.all(np.isfinite(d)):
        raise ValueError("scaling diagonal must be finite and strictly positive")
    return d


def assemble_blocks(geom: LpGeometry, d) -> NormalBlocks:
    d = _check_d(geom, d)
    m = geom.m
    by_size = {}
    for t, mt in enumerate(geom.m_list):
        by_size.setdefault(mt, []).append(t)
    groups = []
    for mt, ts in sorted(by_size.items()):
        D = np.stack([d[geom.plan_offset(t):geom.plan_offset(t) + m * mt]
                      .reshape(mt, m).T for t in ts])
        groups.append(_Group(np.asarray(ts), mt, D, D.sum(axis=1), D[:, 1:, :].sum(axis=2)))
    dw = d[geom.w_offset:]
    return NormalBlocks(geom, groups, dw[1:].copy(), float(dw.sum()), float(dw[0]))


def _chol_batched(mats, idx, label):
    """Batched Cholesky with one diagonal-shift retry per failing block."""
    try:
        return np.linalg.cholesky(mats)
    except np.linalg.LinAlgError:
        pass
    out = np.empty_like(mats)
    for k in range(mats.shape[0]):
        try:
            out[k] = np.linalg.cholesky(mats[k])
        except np.linalg.LinAlgError:
            A = mats[k].copy()
            shift = 1e-12 * np.mean(np.diag(A))
            A[np.diag_indices_from(A)] += shift
            log.debug("%s block %d not SPD, shifting diagonal by %.3g", label, idx[k], shift)
            try:
                out[k] = np.linalg.cholesky(A)
            except np.linalg.LinAlgError:
                raise KernelError(f"{label} block for measure {idx[k]} is not "
                                  "positive definite", block=int(idx[k])) from None
    return out


def _spd_inverse(L):
    """Inverse of L L^T from a (batched) lower Cholesky factor."""
    Linv = np.linalg.inv(L)
    return np.swapaxes(Linv, -1, -2) @ Linv


def a_blocks(g: _Group) -> np.ndarray:
    """A_tt = B3 - B2^T B1^{-1} B2 for a group, diagonal formed cancellation-free."""
    Dr = g.D[:, 1:, :]                                   # (G, m-1, mt)
    W = Dr / np.sqrt(g.B1)[:, None, :]
    A = -(W @ np.swapaxes(W, 1, 2))
    others = _excl_sum(g.D, axis=1)[:, 1:, :]            # B1_j - D_rj
    diag = np.sum(Dr * others / g.B1[:, None, :], axis=2)
    i = np.arange(A.shape[1])
    A[:, i, i] = diag
    return A


def k_blocks(g: _Group) -> np.ndarray:
    """K_t = B1 - B2 B3^{-1} B2^T for a group, diagonal formed cancellation-free."""
    Dr = g.D[:, 1:, :]                                   # (G, m-1, mt)
    W = Dr / np.sqrt(g.B3)[:, :, None]
    K = -(np.swapaxes(W, 1, 2) @ W)
    others = _excl_sum(Dr, axis=2)                       # B3_r - D_rj
    diag = g.D[:, 0, :] + np.sum(Dr * others / g.B3[:, :, None], axis=1)
    j = np.arange(K.shape[1])
    K[:, j, j] = diag
    return K


class KernelFactorization:
    """Factored normal matrix; immutable after construction."""

    kind: str

    def __init__(self, geom: LpGeometry, blocks, d):
        self.geom = geom
        self.blocks = blocks
        self.d = d

    def apply(self, z):
        return apply_Abar(self.geom, self.d * apply_Abar_T(self.geom, z))

    def _solve(self, f):
        raise NotImplementedError

    def solve(self, f, refine=True):
        """Solve with one step of iterative refinement when the relative
        residual exceeds ``REFINE_THRESHOLD``."""
        f = np.asarray(f, dtype=float)
        z = self._solve(f)
        if refine:
            fn = np.linalg.norm(f)
            r = f - self.apply(z)
            if fn > 0 and np.linalg.norm(r) > REFINE_THRESHOLD * fn:
                z = z + self._solve(r)
        return z

    def nbytes(self) -> int:
        return sum(v.nbytes for v in self._stored())

    def _stored(self):
        return []


class _BlockFactorization(KernelFactorization):
    """Shared Algorithm-1 elimination; subclasses provide the middle solve."""

    def _solve(self, f):
        b, geom = self.blocks, self.geom
        M, N, m = geom.M, geom.N, geom.m
        f1, f2, f3 = f[:M], f[M:-1].reshape(N, m - 1), f[-1]
        f1_t = [np.stack([f1[geom.row_offset(t):geom.row_offset(t) + g.mt] for t in g.idx])
                for g in b.groups]
        # V1: subtract B2^T B1^{-1} f1; V2: subtract alpha f3 / c
        z2 = f2.copy()
        for g, ft in zip(b.groups, f1_t):
            z2[g.idx] -= np.einsum("gjr,gj->gr", g.B2, ft / g.B1)
        z2 += b.y * (f3 / b.c)
        # decoupled systems
        mid = self.solve_middle(z2)
        z_last = f3 / b.c + b.y @ mid.sum(axis=0) / b.c
        z = np.empty_like(f)
        for g, ft in zip(b.groups, f1_t):
            top = (ft - np.einsum("gjr,gr->gj", g.B2, mid[g.idx])) / g.B1
            for k, t in enumerate(g.idx):
                r = geom.row_offset(t)
                z[r:r + g.mt] = top[k]
        z[M:-1] = mid.ravel()
        z[-1] = z_last
        return z

    def apply_A1_inv(self, g):
        raise NotImplementedError

    def solve_core(self, v):
        raise NotImplementedError

    def solve_middle(self, g):
        """(A1 + (1 1^T) kron Y) x = g by one Woodbury correction.

        ``g`` has shape (N, m-1), one slice per measure.
        """
        x1 = self.apply_A1_inv(g)
        x3 = self.solve_core(x1.sum(axis=0))
        x5 = self.apply_A1_inv(np.broadcast_to(x3, g.shape))
        return x1 - x5


class SlrmFactorization(_BlockFactorization):
    kind = SLRM

    def __init__(self, blocks, d):
        super().__init__(blocks.geom, blocks, d)
        m = self.geom.m
        self.A_inv = []
        core = np.diag(1.0 / blocks.y) + 1.0 / blocks.w0
        for g in blocks.groups:
            A = a_blocks(g)
            L = _chol_batched(A, g.idx, "A_tt")
            Ainv = _spd_inverse(L)
            self.A_inv.append(Ainv)
            core += Ainv.sum(axis=0)
        self.core_L = _chol_batched(core[None], [-1], "core")[0]
        assert self.core_L.shape == (m - 1, m - 1)

    def apply_A1_inv(self, g):
        out = np.empty_like(g, dtype=float)
        for grp, Ainv in zip(self.blocks.groups, self.A_inv):
            out[grp.idx] = np.einsum("grs,gs->gr", Ainv, g[grp.idx])
        return out

    def solve_core(self, v):
        return sla.cho_solve((self.core_L, True), v)

    def _stored(self):
        return self.A_inv + [self.core_L]


class DlrmFactorization(_BlockFactorization):
    kind = DLRM

    def __init__(self, blocks, d, cg_tol=1e-12, explicit_max_m=EXPLICIT_CORE_MAX_M,
                 explicit_fallback=True):
        super().__init__(blocks.geom, blocks, d)
        m = self.geom.m
        self.K_inv = []
        for g in blocks.groups:
            L = _chol_batched(k_blocks(g), g.idx, "K_t")
            self.K_inv.append(_spd_inverse(L))
        self.cg_tol = cg_tol
        self.explicit_fallback = explicit_fallback
        self.core_L = None
        self.cg_iterations = 0
        if m <= explicit_max_m:
            self.core_L = self._explicit_core()
        else:
            # exact diagonal of Y^{-1} + sum_t A_tt^{-1} as the Jacobi preconditioner
            pre = 1.0 / blocks.y + 1.0 / blocks.w0
            for g, Kinv in zip(blocks.groups, self.K_inv):
                Wt = g.B2 / g.B3[:, None, :]
                pre = pre + np.sum(1.0 / g.B3, axis=0)
                pre = pre + np.einsum("gjr,gjk,gkr->r", Wt, Kinv, Wt)
            self.core_precond = 1.0 / pre

    def _explicit_core(self):
        blocks, m = self.blocks, self.geom.m
        core = np.diag(1.0 / blocks.y) + 1.0 / blocks.w0
        for g, Kinv in zip(blocks.groups, self.K_inv):
            Wt = g.B2 / g.B3[:, None, :]                 # B2 B3^{-1}, (G, mt, m-1)
            core[np.diag_indices(m - 1)] += np.sum(1.0 / g.B3, axis=0)
            core += np.einsum("gjr,gjs->rs", Wt, Kinv @ Wt)
        return _chol_batched(core[None], [-1], "core")[0]

    def apply_A1_inv(self, v):
        """A_tt^{-1} v = B3^{-1} v + B3^{-1} B2^T K^{-1} B2 B3^{-1} v, as mat-vecs."""
        out = np.empty(v.shape)
        for g, Kinv in zip(self.blocks.groups, self.K_inv):
            u = v[g.idx] / g.B3
            s = np.einsum("gjr,gr->gj", g.B2, u)
            s = np.einsum("gjk,gk->gj", Kinv, s)
            out[g.idx] = u + np.einsum("gjr,gj->gr", g.B2, s) / g.B3
        return out

    def _core_apply(self, v):
        N = self.geom.N
        return self.blocks.Y_inv_apply(v) + self.apply_A1_inv(
            np.broadcast_to(v, (N, v.size))).sum(axis=0)

    def solve_core(self, v):
        if self.core_L is not None:
            return sla.cho_solve((self.core_L, True), v)
        try:
            return self._pcg(v)
        except KernelError as err:
            if not self.explicit_fallback:
                raise
            log.info("%s; forming the DLRM core explicitly", err)
            self.core_L = self._explicit_core()
            return sla.cho_solve((self.core_L, True), v)

    def _pcg(self, b):
        n = b.size
        max_iter = 5 * n
        bn = np.linalg.norm(b)
        x = np.zeros(n)
        if bn == 0:
            return x
        r = b.copy()
        z = self.core_precond * r
        p = z.copy()
        rz = r @ z
        for it in range(1, max_iter + 1):
            q = self._core_apply(p)
            alpha = rz / (p @ q)
            x += alpha * p
            r -= alpha * q
            res = np.linalg.norm(r)
            if res <= self.cg_tol * bn:
                self.cg_iterations += it
                return x
            z = self.core_precond * r
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
        raise KernelError(f"core CG did not converge in {max_iter} iterations "
                          f"(relative residual {res / bn:.3e})", residual=res / bn)

    def _stored(self):
        extra = [self.core_L] if self.core_L is not None else [self.core_precond]
        return self.K_inv + extra


class DenseFactorization(KernelFactorization):
    kind = DENSE

    def __init__(self, geom, d):
        super().__init__(geom, None, d)
        if geom.n_row_bar > DENSE_CAP:
            raise ValueError(f"dense kernel size cap: n_row_bar={geom.n_row_bar} "
                             f"exceeds {DENSE_CAP}")
        A = sparse_Abar(geom)
        H = (A.multiply(d[None, :]) @ A.T).toarray()
        try:
            self.factor = sla.cho_factor(H, lower=True)
        except np.linalg.LinAlgError:
            self.factor = _chol_batched(H[None], [-1], "dense")[0], True

    def _solve(self, f):
        return sla.cho_solve(self.factor, f)

    def _stored(self):
        return [self.factor[0]]


def dense_normal_matrix(geom: LpGeometry, d) -> np.ndarray:
    A = sparse_Abar(geom)
    return (A.multiply(np.asarray(d)[None, :]) @ A.T).toarray()


def factorize(geom: LpGeometry, d, kernel: str = "auto") -> KernelFactorization:
    d = _check_d(geom, d)
    if kernel == "auto":
        kernel = select_kernel(geom.m, geom.m_list)
    if kernel == DENSE:
        return DenseFactorization(geom, d)
    blocks = assemble_blocks(geom, d)
    if kernel == SLRM:
        return SlrmFactorization(blocks, d)
    if kernel == DLRM:
        return DlrmFactorization(blocks, d)
    raise ValueError(f"unknown kernel {kernel!r}; expected auto, {', '.join(KERNELS)}")


def solve_normal(geom: LpGeometry, d, f, kernel: str = "auto", refine=True) -> np.ndarray:
    """Solve ``(A D A^T) z = f`` with the requested kernel."""
    f = np.asarray(f, dtype=float)
    if f.shape != (geom.n_row_bar,):
        raise ValueError(f"rhs has shape {f.shape}, expected ({geom.n_row_bar},)")
    return factorize(geom, d, kernel).solve(f, refine=refine)


def solve_middle_slrm(factors: SlrmFactorization, g):
    N, m = factors.geom.N, factors.geom.m
    return factors.solve_middle(np.asarray(g, dtype=float).reshape(N, m - 1)).ravel()


def solve_middle_dlrm(factors: DlrmFactorization, g):
    N, m = factors.geom.N, factors.geom.m
    return factors.solve_middle(np.asarray(g, dtype=float).reshape(N, m - 1)).ravel()


def middle_matrix(blocks: NormalBlocks) -> np.ndarray:
    """Dense A1 + A2 (test oracle)."""
    geom = blocks.geom
    N, m = geom.N, geom.m
    n = m - 1
    H = np.kron(np.ones((N, N)), blocks.Y())
    for g in blocks.groups:
        A = a_blocks(g)
        for k, t in enumerate(g.idx):
            H[t * n:(t + 1) * n, t * n:(t + 1) * n] += A[k]
    return H
