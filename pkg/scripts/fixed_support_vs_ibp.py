#!/usr/bin/env python3
"""Fixed-support barycenters: interior-point solve vs. IBP at several eps.

For each trial draws N Gaussian clouds (atoms standard normal, weights uniform
then normalized), takes a k-means support, and reports time, normalized
objective |F - F_ref| / F_ref against a dense tolerance-1e-9 interior-point
run, and feasibility error.

    python scripts/fixed_support_vs_ibp.py --N 10 --m 20 --trials 5
"""
import argparse
import time

import numpy as np

from wassbary.baseline_ibp import ibp_solve
from wassbary.cli import reference_solve
from wassbary.ipm import solve_fixed_support
from wassbary.measures import BarycenterProblem, gaussian_measures, kmeans_support


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=int, default=10)
    ap.add_argument("--m", type=int, default=20)
    ap.add_argument("--mt", type=int, default=None, help="atoms per measure (default m)")
    ap.add_argument("--dim", type=int, default=3)
    ap.add_argument("--trials", type=int, default=5)
    ap.add_argument("--eps", nargs="+", type=float, default=[0.1, 0.01])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    solvers = {"maaipm": lambda p, X: solve_fixed_support(p, X)}
    for e in args.eps:
        solvers[f"ibp:{e:g}"] = (lambda eps: lambda p, X: ibp_solve(p, X, eps))(e)
    stats = {k: [] for k in solvers}
    for t in range(args.trials):
        rng = np.random.default_rng([args.seed, t])
        ms = gaussian_measures(args.N, args.mt or args.m, args.dim, rng)
        prob = BarycenterProblem(ms, args.m)
        X = kmeans_support(ms, args.m, seed=t).points
        ref = reference_solve(prob, X).objective
        for name, solve in solvers.items():
            t0 = time.perf_counter()
            sol = solve(prob, X)
            dt = time.perf_counter() - t0
            stats[name].append((dt, abs(sol.objective - ref) / ref, sol.feasibility_error))

    print("solver\tmean_time\tnormalized_obj\tfeasibility_error")
    for name, rows in stats.items():
        a = np.array(rows)
        print(f"{name}\t{a[:, 0].mean():.4f}\t{a[:, 1].mean():.3e}\t{a[:, 2].mean():.3e}")


if __name__ == "__main__":
    main()
