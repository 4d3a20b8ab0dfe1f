"""Discrete measures, squared-distance matrices and support initialization."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

WEIGHT_FLOOR = 1e-12


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.shape[1] < 1:
        raise ValueError(f"points must be a 2-D array (n, d), got shape {pts.shape}")
    return pts


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point cloud in R^d.

    ``points`` has shape (m_t, d) and ``weights`` lies on the simplex.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = _as_points(self.points)
        w = np.asarray(self.weights, dtype=float).ravel()
        if pts.shape[0] != w.shape[0]:
            raise ValueError(f"{pts.shape[0]} points but {w.shape[0]} weights")
        if pts.shape[0] == 0:
            raise ValueError("a measure needs at least one atom")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def interior_weights(self) -> np.ndarray:
        """Weights with entries below ``WEIGHT_FLOOR`` clamped, renormalized."""
        w = np.maximum(self.weights, WEIGHT_FLOOR)
        return w / w.sum()

    @classmethod
    def from_raw(cls, points, raw_weights) -> "DiscreteMeasure":
        return cls(points, normalize_weights(raw_weights))


@dataclass(frozen=True)
class SupportSet:
    points: np.ndarray

    def __post_init__(self):
        pts = _as_points(self.points)
        if pts.shape[0] < 1:
            raise ValueError("support needs at least one point")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class GridImage:
    """Grayscale image stored row-major, ``intensities[row * width + col]``."""

    width: int
    height: int
    intensities: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")
        vals = np.asarray(self.intensities, dtype=float).ravel()
        if vals.size != self.width * self.height:
            raise ValueError(
                f"{vals.size} intensities for a {self.width}x{self.height} image")
        if np.any(vals < 0):
            raise ValueError("intensities must be nonnegative")
        vals.setflags(write=False)
        object.__setattr__(self, "intensities", vals)

    def as_array(self) -> np.ndarray:
        return self.intensities.reshape(self.height, self.width)


@dataclass(frozen=True)
class BarycenterProblem:
    """N input measures and the number of barycenter atoms ``m``."""

    measures: tuple
    m: int

    def __post_init__(self):
        ms = tuple(self.measures)
        if not ms:
            raise ValueError("need at least one measure")
        dims = {mu.dim for mu in ms}
        if len(dims) != 1:
            raise ValueError(f"measures have mixed dimensions {sorted(dims)}")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        object.__setattr__(self, "measures", ms)

    @property
    def N(self) -> int:
        return len(self.measures)

    @property
    def dim(self) -> int:
        return self.measures[0].dim

    @property
    def sizes(self) -> tuple:
        return tuple(mu.size for mu in self.measures)


def distance_matrix(X, Q) -> np.ndarray:
    """Squared Euclidean distances ``D[i, j] = |x_i - q_j|^2``.

    ``X`` may be a :class:`SupportSet` or an array of points, ``Q`` a
    :class:`DiscreteMeasure` or an array of points.
    """
    xp = X.points if isinstance(X, SupportSet) else _as_points(X)
    qp = Q.points if isinstance(Q, DiscreteMeasure) else _as_points(Q)
    if xp.shape[1] != qp.shape[1]:
        raise ValueError(f"dimension mismatch: {xp.shape[1]} vs {qp.shape[1]}")
    diff = xp[:, None, :] - qp[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def normalize_weights(raw) -> np.ndarray:
    w = np.asarray(raw, dtype=float).ravel()
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("raw weights must be finite and nonnegative")
    total = w.sum()
    if not total > 0:
        raise ValueError("cannot normalize an all-zero weight vector")
    w = w / total
    # one more pass so the sum is 1 to the last ulp in most cases
    return w / w.sum()


def _weighted_sse(points, weights, centers):
    d2 = distance_matrix(points, centers)
    labels = np.argmin(d2, axis=1)
    return labels, float(np.dot(weights, d2[np.arange(len(points)), labels]))


def _kmeans_once(points, weights, k, rng, max_iter=100, rtol=1e-9):
    n = points.shape[0]
    p = weights / weights.sum()
    centers = np.empty((k, points.shape[1]))
    first = rng.choice(n, p=p)
    centers[0] = points[first]
    closest = distance_matrix(points, centers[:1])[:, 0]
    for c in range(1, k):
        score = weights * closest
        total = score.sum()
        if total <= 0:
            # every remaining point coincides with a center; pick unused points
            idx = rng.choice(n, p=p)
        else:
            idx = rng.choice(n, p=score / total)
        centers[c] = points[idx]
        closest = np.minimum(closest, distance_matrix(points, centers[c:c + 1])[:, 0])

    labels, sse = _weighted_sse(points, weights, centers)
    for _ in range(max_iter):
        new_centers = centers.copy()
        for c in range(k):
            mask = labels == c
            mass = weights[mask].sum()
            if mass > 0:
                new_centers[c] = weights[mask] @ points[mask] / mass
        labels, new_sse = _weighted_sse(points, weights, new_centers)
        centers = new_centers
        if abs(sse - new_sse) <= rtol * max(sse, 1e-300):
            sse = new_sse
            break
        sse = new_sse
    return centers, sse


def weighted_kmeans(points, weights, k: int, seed: int = 0, n_init: int = 1):
    """Weighted k-means with k-means++ seeding.

    Returns ``(centers, sse)`` of the best of ``n_init`` runs. Ties in the
    nearest-center assignment go to the lowest center index.
    """
    points = _as_points(points)
    weights = np.asarray(weights, dtype=float).ravel()
    n_distinct = np.unique(points, axis=0).shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n_distinct:
        raise ValueError(f"cannot place {k} centers on {n_distinct} distinct points")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        centers, sse = _kmeans_once(points, weights, k, rng)
        if best is None or sse < best[1]:
            best = (centers, sse)
    return best


def pooled_atoms(measures: Sequence[DiscreteMeasure]):
    """Stack the atoms of all measures; each measure carries total mass 1."""
    pts = np.vstack([mu.points for mu in measures])
    wts = np.concatenate([mu.weights for mu in measures])
    return pts, wts


def _canonical_order(points, weights):
    order = np.lexsort(np.column_stack([points, weights]).T[::-1])
    return points[order], weights[order]


def kmeans_support(measures: Sequence[DiscreteMeasure], m: int, seed: int = 0,
                   n_init: int = 1) -> SupportSet:
    """Initial barycenter support from weighted k-means on the pooled atoms."""
    if m < 1:
        raise ValueError("m must be >= 1")
    pts, wts = pooled_atoms(measures)
    if m > pts.shape[0]:
        raise ValueError(f"m={m} exceeds the {pts.shape[0]} pooled support points")
    # sort so the result does not depend on the order of the measures
    pts, wts = _canonical_order(pts, wts)
    centers, _ = weighted_kmeans(pts, wts, m, seed=seed, n_init=n_init)
    return SupportSet(centers)


def image_to_measure(img: GridImage, drop_zeros: bool = False) -> DiscreteMeasure:
    """Pixel centers in [0, 1]^2 weighted by normalized intensity."""
    vals = img.intensities
    if not vals.sum() > 0:
        raise ValueError("image has zero total intensity")
    rows, cols = np.divmod(np.arange(vals.size), img.width)
    xs = cols / (img.width - 1) if img.width > 1 else np.zeros(vals.size)
    ys = rows / (img.height - 1) if img.height > 1 else np.zeros(vals.size)
    pts = np.column_stack([xs, ys])
    if drop_zeros:
        keep = vals > 0
        pts, vals = pts[keep], vals[keep]
    return DiscreteMeasure(pts, normalize_weights(vals))


def gaussian_measures(N: int, size: int, d: int, rng) -> list:
    """Random instance generator: i.i.d. standard normal atoms, uniform(0,1)
    weights normalized to the simplex. ``size`` may be an int or a list."""
    sizes = [size] * N if np.isscalar(size) else list(size)
    out = []
    for mt in sizes:
        pts = rng.standard_normal((mt, d))
        out.append(DiscreteMeasure(pts, normalize_weights(rng.uniform(0.0, 1.0, mt))))
    return out
