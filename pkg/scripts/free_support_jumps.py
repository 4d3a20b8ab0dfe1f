#!/usr/bin/env python3
"""Effect of the jump restarts on free-support barycenters.

Runs the alternating scheme with and without jumps on (a) the three-atom
instance whose support [0, 1] is a local minimum and (b) random Gaussian
clouds, over a list of seeds.

    python scripts/free_support_jumps.py --seeds 10
"""
import argparse

import numpy as np

from wassbary.maaipm import Schedule, solve_free_support
from wassbary.measures import BarycenterProblem, DiscreteMeasure, gaussian_measures


def local_min_instance(N):
    mu = DiscreteMeasure(np.array([0.0, 0.9, 1.1]), np.array([0.01, 0.495, 0.495]))
    return BarycenterProblem([mu] * N, 2), np.array([0.0, 1.0])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--jumps", type=int, default=3)
    ap.add_argument("--N", type=int, default=8)
    ap.add_argument("--m", type=int, default=6)
    args = ap.parse_args()

    prob, X0 = local_min_instance(4)
    print("instance\tseed\tobjective_J0\tobjective_J\tbest_stage")
    for s in range(args.seeds):
        a = solve_free_support(prob, X0, Schedule(jumps=0, seed=s))
        b = solve_free_support(prob, X0, Schedule(jumps=args.jumps, seed=s))
        print(f"local-min\t{s}\t{a.objective / 4:.6f}N\t{b.objective / 4:.6f}N\t"
              f"{b.info['phases']['best_stage']}", flush=True)
    for s in range(args.seeds):
        ms = gaussian_measures(args.N, 8, 2, np.random.default_rng(s))
        p = BarycenterProblem(ms, args.m)
        a = solve_free_support(p, schedule=Schedule(jumps=0, seed=s))
        b = solve_free_support(p, schedule=Schedule(jumps=args.jumps, seed=s))
        print(f"gaussian\t{s}\t{a.objective:.6f}\t{b.objective:.6f}\t"
              f"{b.info['phases']['best_stage']}", flush=True)


if __name__ == "__main__":
    main()
