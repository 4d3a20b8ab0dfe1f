#!/usr/bin/env python3
"""Free-support barycenter of grayscale images, rendered as PGM.

Reads images from an IDX file (e.g. MNIST digits) or, without one, draws
synthetic ring images with random centers and radii. Zero pixels are dropped,
so every image has its own sparse support.

    python scripts/image_barycenter.py --out ring.pgm
    python scripts/image_barycenter.py --idx train-images-idx3-ubyte.gz --count 20 --out digit.pgm
"""
import argparse

import numpy as np

from wassbary import formats
from wassbary.maaipm import Schedule, solve_free_support
from wassbary.measures import BarycenterProblem, GridImage, image_to_measure


def synthetic_rings(count, size, rng):
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    images = []
    for _ in range(count):
        cx, cy = rng.uniform(0.35, 0.65, 2)
        r = rng.uniform(0.2, 0.3)
        ring = np.exp(-((np.hypot(xx - cx, yy - cy) - r) / 0.06) ** 2)
        images.append(np.rint(255 * ring * (ring > 0.1)))
    return [GridImage(size, size, im.ravel()) for im in images]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--idx", help="IDX image file; synthetic rings if omitted")
    ap.add_argument("--count", type=int, default=8)
    ap.add_argument("--size", type=int, default=16, help="synthetic image size")
    ap.add_argument("--m", type=int, default=40, help="barycenter support size")
    ap.add_argument("--jumps", type=int, default=1)
    ap.add_argument("--grid", type=int, default=None, help="render size (default image size)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="barycenter.pgm")
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    images = formats.read_idx(args.idx)[:args.count] if args.idx else \
        synthetic_rings(args.count, args.size, rng)
    measures = [image_to_measure(im, drop_zeros=True) for im in images]
    prob = BarycenterProblem(measures, args.m)
    sol = solve_free_support(prob, schedule=Schedule(jumps=args.jumps, seed=args.seed))
    ph = sol.info["phases"]
    print(f"{len(measures)} images, atoms per image {min(mu.size for mu in measures)}.."
          f"{max(mu.size for mu in measures)}; objective {sol.objective:.6f} "
          f"(best stage {ph['best_stage']}), {sol.info['time']:.1f}s")
    side = args.grid or images[0].width
    formats.write_pgm(args.out, formats.render_grid(np.clip(sol.support, 0, 1), sol.w, side, side))
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
