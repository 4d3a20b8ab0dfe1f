"""File formats: point-cloud measures (JSON/CSV), solutions, IDX images, PGM.

JSON measure::

    {"points": [[x, y], ...], "weights": [w, ...]}

CSV measure: one atom per line, ``d`` coordinate columns then the weight; a
non-numeric first line is treated as a header.

IDX (MNIST image layout)::

    [offset] [type]          [value]
    0000     32 bit integer  0x00000803  magic (unsigned byte data, 3 dims)
    0004     32 bit integer  count
    0008     32 bit integer  rows
    0012     32 bit integer  cols
    0016     unsigned byte   pixels, row-major, image after image
"""
from __future__ import annotations

import csv
import gzip
import json
import struct
from pathlib import Path

import numpy as np

from .measures import DiscreteMeasure, GridImage

IDX_MAGIC = 0x00000803


# ---------------------------------------------------------------- measures

def measure_to_dict(mu: DiscreteMeasure) -> dict:
    return {"points": mu.points.tolist(), "weights": mu.weights.tolist()}


def measure_from_dict(obj: dict) -> DiscreteMeasure:
    try:
        pts, wts = obj["points"], obj["weights"]
    except (KeyError, TypeError):
        raise ValueError("measure JSON needs 'points' and 'weights'") from None
    # raw weights are normalized; files written here already sum to 1
    return DiscreteMeasure.from_raw(np.asarray(pts, dtype=float), wts)


def read_measure(path) -> DiscreteMeasure:
    """Load a measure from ``.json`` or ``.csv``."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_measure_csv(path)
    with open(path) as fh:
        return measure_from_dict(json.load(fh))


def write_measure(path, mu: DiscreteMeasure):
    with open(path, "w") as fh:
        json.dump(measure_to_dict(mu), fh)


def read_measure_csv(path) -> DiscreteMeasure:
    rows = []
    with open(path, newline="") as fh:
        for k, row in enumerate(csv.reader(fh)):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                rows.append([float(cell) for cell in row])
            except ValueError:
                if k == 0:
                    continue  # header
                raise ValueError(f"{path}: non-numeric entry on line {k + 1}") from None
    if not rows:
        raise ValueError(f"{path}: no atoms")
    if len({len(r) for r in rows}) != 1 or len(rows[0]) < 2:
        raise ValueError(f"{path}: rows need d >= 1 coordinates plus a weight")
    arr = np.array(rows)
    return DiscreteMeasure.from_raw(arr[:, :-1], arr[:, -1])


def read_points(path) -> np.ndarray:
    """Support points from JSON (``{"points": ...}``, a bare list, or a
    solution file's ``"X"``) or CSV (every column is a coordinate)."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        arr = np.loadtxt(path, delimiter=",", ndmin=2)
    else:
        with open(path) as fh:
            obj = json.load(fh)
        if isinstance(obj, dict):
            obj = obj.get("points", obj.get("X"))
        if obj is None:
            raise ValueError(f"{path}: no 'points' or 'X' entry")
        arr = np.asarray(obj, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr


# ---------------------------------------------------------------- solutions

def solution_to_dict(sol, include_plans=False) -> dict:
    out = {
        "w": sol.w.tolist(),
        "X": np.asarray(sol.support).tolist(),
        "objective": sol.objective,
        "feasibility_error": sol.feasibility_error,
        "gap": None if not np.isfinite(sol.gap) else sol.gap,
        "iterations": sol.iterations,
        "converged": bool(sol.converged),
        "time": (sol.info or {}).get("time"),
    }
    if include_plans:
        out["plans"] = [np.asarray(P).tolist() for P in sol.plans]
    return out


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, default=_json_default)


def _json_default(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialize {type(v).__name__}")


def rescore(solution: dict, plans: list, measures) -> tuple:
    """Objective and feasibility error recomputed from a written solution."""
    from .lp_model import feasibility_error, objective

    X = np.asarray(solution["X"], dtype=float)
    w = np.asarray(solution["w"], dtype=float)
    plans = [np.asarray(P, dtype=float) for P in plans]
    return objective(X, plans, measures), feasibility_error(w, plans, measures)


# ---------------------------------------------------------------- IDX / PGM

def _open(path, mode):
    return gzip.open(path, mode) if str(path).endswith(".gz") else open(path, mode)


def read_idx(path) -> list:
    """Images of an IDX unsigned-byte file as ``GridImage`` objects."""
    with _open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise ValueError(f"{path}: truncated IDX header")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_MAGIC:
            raise ValueError(f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{IDX_MAGIC:08x}")
        data = fh.read(count * rows * cols)
    if len(data) != count * rows * cols:
        raise ValueError(f"{path}: expected {count * rows * cols} pixel bytes, got {len(data)}")
    pix = np.frombuffer(data, dtype=np.uint8).reshape(count, rows * cols)
    return [GridImage(cols, rows, p.astype(float)) for p in pix]


def write_idx(path, images):
    """Write a (count, rows, cols) uint8 array as an IDX file."""
    arr = np.asarray(images)
    if arr.ndim != 3:
        raise ValueError("IDX images must be a (count, rows, cols) array")
    if arr.min(initial=0) < 0 or arr.max(initial=0) > 255:
        raise ValueError("IDX pixels must fit in unsigned bytes")
    with _open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_MAGIC, *arr.shape))
        fh.write(arr.astype(np.uint8).tobytes())


def write_pgm(path, pixels):
    """Binary PGM (P5, maxval 255) from a (height, width) uint8 array."""
    pix = np.asarray(pixels)
    if pix.ndim != 2:
        raise ValueError("PGM needs a 2-D array")
    h, w = pix.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pix.astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise ValueError("16-bit PGM is not supported")
    pos += 1  # single whitespace byte after maxval
    return np.frombuffer(data[pos:pos + w * h], dtype=np.uint8).reshape(h, w)


def render_grid(points, weights, width: int, height: int) -> np.ndarray:
    """Accumulate each atom's weight into its nearest grid cell and scale so
    the heaviest cell is 255.

    Cell centers sit at ``(col / (width - 1), row / (height - 1))``, the same
    convention as :func:`wassbary.measures.image_to_measure`.
    """
    pts = np.asarray(points, dtype=float)
    wts = np.asarray(weights, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"rendering needs 2-D support points, got dimension "
                         f"{pts.shape[1] if pts.ndim == 2 else pts.ndim}")
    if np.any(pts < -1e-9) or np.any(pts > 1 + 1e-9):
        raise ValueError("support points must lie in [0, 1]^2 to be rendered")
    cols = np.rint(pts[:, 0] * (width - 1)).astype(int) if width > 1 else np.zeros(len(pts), int)
    rows = np.rint(pts[:, 1] * (height - 1)).astype(int) if height > 1 else np.zeros(len(pts), int)
    grid = np.zeros((height, width))
    np.add.at(grid, (rows, cols), wts)
    top = grid.max()
    if not top > 0:
        return np.zeros((height, width), dtype=np.uint8)
    return np.rint(255.0 * grid / top).astype(np.uint8)
