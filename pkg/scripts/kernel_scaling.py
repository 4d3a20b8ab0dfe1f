#!/usr/bin/env python3
"""Time the normal-equation kernels while scaling N, m or m_t from a base size.

Prints a TSV with one row per (scaled quantity, factor, kernel). Entries of the
scaling diagonal are uniform on (0, 1), as are the right-hand sides.

    python scripts/kernel_scaling.py --base 50 50 25 --factors 0.5 1 2 --reps 5
"""
import argparse
import time

import numpy as np

from wassbary import lp_model as lp
from wassbary import normal_kernel as nk


def median_time(N, m, mt, kernel, reps, seed=0):
    g = lp.LpGeometry(N, m, (mt,) * N)
    rng = np.random.default_rng([seed, N, m, mt])
    d = rng.uniform(0.0, 1.0, g.n_col) + 1e-12
    f = rng.uniform(0.0, 1.0, g.n_row_bar)
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        nk.factorize(g, d, kernel).solve(f)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--base", nargs=3, type=int, default=[50, 50, 25], metavar=("N", "M", "MT"))
    ap.add_argument("--factors", nargs="+", type=float, default=[0.5, 1.0, 2.0])
    ap.add_argument("--kernels", nargs="+", default=["slrm", "dlrm"], choices=nk.KERNELS)
    ap.add_argument("--reps", type=int, default=5)
    args = ap.parse_args()

    N0, m0, mt0 = args.base
    print("scaled\tfactor\tN\tm\tm_t\tkernel\tselected\tmedian_time")
    for which in ("N", "m", "m_t"):
        for a in args.factors:
            N = max(1, round(N0 * a)) if which == "N" else N0
            m = max(2, round(m0 * a)) if which == "m" else m0
            mt = max(1, round(mt0 * a)) if which == "m_t" else mt0
            chosen = nk.select_kernel(m, (mt,) * N)
            for k in args.kernels:
                g = lp.LpGeometry(N, m, (mt,) * N)
                if k == nk.DENSE and g.n_row_bar > nk.DENSE_CAP:
                    continue
                t = median_time(N, m, mt, k, args.reps)
                print(f"{which}\t{a:g}\t{N}\t{m}\t{mt}\t{k}\t{chosen}\t{t:.6f}", flush=True)


if __name__ == "__main__":
    main()
