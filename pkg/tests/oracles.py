"""Independent reference computations used by the tests.

Nothing here goes through the block kernels or the interior-point code: LPs
are solved by HiGHS on the full (unreduced) constraint matrix, and normal
matrices are formed densely from the explicit constraint matrix.
"""
import itertools

import numpy as np
from scipy.optimize import linprog

from wassbary import lp_model as lp
from wassbary.measures import BarycenterProblem


def lp_optimum(measures, X):
    """Optimal value of the fixed-support LP via HiGHS on the full system."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    geom = lp.build_geometry(BarycenterProblem(measures, X.shape[0]))
    res = linprog(lp.cost_vector(geom, X, measures), A_eq=lp.dense_A_full(geom),
                  b_eq=lp.b_full(geom, measures, interior=False), bounds=(0, None),
                  method="highs", options={"primal_feasibility_tolerance": 1e-10,
                                           "dual_feasibility_tolerance": 1e-10})
    assert res.status == 0, res.message
    return res.fun


def dense_normal(geom, d):
    A = lp.dense_Abar(geom)
    return (A * d) @ A.T


def brute_force_kmeans(points, weights, k):
    """Exact weighted k-means by enumerating labelings (tiny inputs only)."""
    points = np.asarray(points, dtype=float).reshape(len(points), -1)
    best = (np.inf, None)
    for labels in itertools.product(range(k), repeat=len(points)):
        labels = np.array(labels)
        if len(set(labels)) < k:
            continue
        centers = np.array([np.average(points[labels == c], axis=0,
                                       weights=weights[labels == c]) for c in range(k)])
        sse = sum(weights[i] * np.sum((points[i] - centers[labels[i]]) ** 2)
                  for i in range(len(points)))
        if sse < best[0]:
            best = (sse, centers)
    return best


def random_feasible(geom, rng, measures):
    """A random strictly positive point of the feasible set: w on the simplex and
    plans from the product coupling perturbed along a zero-marginal direction."""
    w = rng.dirichlet(np.ones(geom.m))
    plans = []
    for mu in measures:
        a = mu.interior_weights()
        P = np.outer(w, a)
        if geom.m > 1 and mu.size > 1:
            i, j = rng.choice(geom.m, 2, replace=False), rng.choice(mu.size, 2, replace=False)
            eps = 0.5 * min(P[i[0], j[0]], P[i[1], j[1]])
            P[i[0], j[0]] -= eps
            P[i[1], j[1]] -= eps
            P[i[0], j[1]] += eps
            P[i[1], j[0]] += eps
        plans.append(P)
    return geom.pack(plans, w)
