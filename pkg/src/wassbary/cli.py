"""Command-line frontend.

Subcommands::

    wassbary solve-fixed  MEASURE... (--support FILE | --kmeans M) --out FILE
    wassbary solve-free   MEASURE... --m M [--jumps J] --out FILE
    wassbary bench        CONFIG [--tsv FILE] [--json-dir DIR] [--workers K]
    wassbary render       SOLUTION --grid WxH --out FILE.pgm
    wassbary convert      IDX --out-dir DIR [--limit K] [--drop-zeros]
    wassbary rescore      SOLUTION PLANS MEASURE...

Exit codes: 0 success, 1 usage or input error, 2 nonconvergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import formats
from .baseline_ibp import IbpUnderflowError, ibp_free_support, ibp_solve
from .ipm import SolveOptions, solve_fixed_support
from .lp_model import build_geometry
from .maaipm import Schedule, solve_free_support
from .measures import BarycenterProblem, gaussian_measures, image_to_measure, kmeans_support
from .normal_kernel import DENSE, DENSE_CAP, KERNELS, KernelError, factorize

log = logging.getLogger("wassbary")

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------- reports

@dataclass
class RunReport:
    solver: str
    time: float
    iterations: int
    objective: float
    feasibility_error: float
    gap: float = float("nan")
    normalized_obj: float = float("nan")

    def __post_init__(self):
        if self.time < 0:
            raise ValueError("negative wall time")


def normalized_objective(value, reference) -> float:
    return abs(value - reference) / abs(reference) if reference else float("nan")


def reference_solve(problem, X):
    """Tight fixed-support reference: dense kernel at tolerance 1e-9 when the
    system fits under the dense cap, SLRM otherwise."""
    geom = build_geometry(problem) if problem.m > 1 else None
    kernel = DENSE if geom is None or geom.n_row_bar <= DENSE_CAP else "slrm"
    return solve_fixed_support(problem, X, SolveOptions(tol=1e-9, kernel=kernel))


# ---------------------------------------------------------------- helpers

def _load_problem(paths, m):
    if not paths:
        raise UsageError("need at least one measure file")
    measures = [formats.read_measure(p) for p in paths]
    return BarycenterProblem(measures, m)


def _write_solution(args, sol, extra=None):
    out = formats.solution_to_dict(sol)
    if extra:
        out.update(extra)
    formats.write_json(args.out, out)
    if getattr(args, "plans", None):
        formats.write_json(args.plans, {"plans": [P.tolist() for P in sol.plans]})


def cmd_solve_fixed(args) -> int:
    if (args.support is None) == (args.kmeans is None):
        raise UsageError("give exactly one of --support or --kmeans")
    if args.support is not None:
        X = formats.read_points(args.support)
        problem = _load_problem(args.measures, X.shape[0])
    else:
        problem = _load_problem(args.measures, args.kmeans)
        X = kmeans_support(problem.measures, args.kmeans, seed=args.seed).points
    if X.shape[1] != problem.dim:
        raise ValueError(f"support dimension {X.shape[1]} != measure dimension {problem.dim}")
    if args.kernel == DENSE and problem.m > 1:
        n = build_geometry(problem).n_row_bar
        if n > DENSE_CAP:
            raise ValueError(f"dense kernel size cap: n_row_bar={n} exceeds {DENSE_CAP}")
    opts = SolveOptions(tol=args.tol, max_iter=args.max_iter, kernel=args.kernel)
    sol = solve_fixed_support(problem, X, opts)
    _write_solution(args, sol, {"kernel": (sol.info or {}).get("kernel")})
    log.info("objective %.9g, gap %.3g, %d iterations", sol.objective, sol.gap, sol.iterations)
    return EXIT_OK if sol.converged else EXIT_NONCONVERGED


def cmd_solve_free(args) -> int:
    problem = _load_problem(args.measures, args.m)
    X0 = formats.read_points(args.init) if args.init else None
    sched = Schedule(period=args.period, jumps=args.jumps, seed=args.seed)
    sol = solve_free_support(problem, X0, sched, SolveOptions(tol=args.tol))
    phases = dict(sol.info.get("phases", {}))
    _write_solution(args, sol, {"phases": phases})
    if args.log:
        formats.write_json(args.log, phases)
    return EXIT_OK if sol.converged else EXIT_NONCONVERGED


def cmd_render(args) -> int:
    try:
        width, height = (int(v) for v in args.grid.lower().split("x"))
    except ValueError:
        raise UsageError(f"--grid expects WxH, got {args.grid!r}") from None
    if width < 1 or height < 1:
        raise UsageError("grid dimensions must be positive")
    with open(args.solution) as fh:
        sol = json.load(fh)
    X = np.asarray(sol["X"], dtype=float)
    if X.ndim != 2 or X.shape[1] != 2:
        raise ValueError("render needs a 2-D barycenter support (d = 2)")
    formats.write_pgm(args.out, formats.render_grid(X, sol["w"], width, height))
    return EXIT_OK


def cmd_convert(args) -> int:
    images = formats.read_idx(args.idx)
    if args.limit is not None:
        images = images[:args.limit]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.idx).name.split(".")[0]
    for k, img in enumerate(images):
        formats.write_measure(out / f"{stem}_{k:05d}.json",
                              image_to_measure(img, drop_zeros=args.drop_zeros))
    log.info("wrote %d measures to %s", len(images), out)
    return EXIT_OK


def cmd_rescore(args) -> int:
    with open(args.solution) as fh:
        sol = json.load(fh)
    with open(args.plans) as fh:
        plans = json.load(fh)["plans"]
    measures = [formats.read_measure(p) for p in args.measures]
    obj, feas = formats.rescore(sol, plans, measures)
    print(f"objective\t{obj:.17g}\nfeasibility_error\t{feas:.17g}")
    return EXIT_OK


# ---------------------------------------------------------------- bench

TSV_COLUMNS = ("solver", "N", "m", "m_t", "trials", "median_time", "mean_time",
               "objective", "normalized_obj", "feasibility_error", "time_ratio")


@dataclass
class BenchRun:
    """One ``[run]`` section; unset keys inherit the global block."""

    N: int
    m: int
    m_t: str
    d: int = 2
    trials: int = 1
    seed: int = 0
    solvers: tuple = ("maaipm",)
    reference: bool = True
    jumps: int = 0
    tol: float = 5e-5
    outer_iters: int = 5
    extra: dict = field(default_factory=dict)


_RUN_KEYS = {"N": int, "m": int, "m_t": str, "d": int, "trials": int, "seed": int,
             "reference": lambda v: v.strip().lower() in ("1", "true", "yes", "on"),
             "jumps": int, "tol": float, "outer_iters": int,
             "solvers": lambda v: tuple(s.strip() for s in v.split(",") if s.strip())}


def parse_config(text: str):
    """Flat ``key = value`` lines; every ``[run]`` header opens a section.
    Keys before the first section are defaults for all sections."""
    defaults, sections, cur = {}, [], None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if line.lower() != "[run]":
                raise ValueError(f"line {lineno}: unknown section {line}")
            cur = {}
            sections.append(cur)
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        (defaults if cur is None else cur)[key] = value
    workers = int(defaults.pop("workers", 1))
    runs = []
    for k, sec in enumerate(sections):
        merged = {**defaults, **sec}
        unknown = set(merged) - set(_RUN_KEYS)
        if unknown:
            raise ValueError(f"run {k}: unknown keys {sorted(unknown)}")
        missing = {"N", "m", "m_t"} - set(merged)
        if missing:
            raise ValueError(f"run {k}: missing keys {sorted(missing)}")
        runs.append(BenchRun(**{key: _RUN_KEYS[key](v) for key, v in merged.items()}))
    if not runs:
        raise ValueError("config has no [run] sections")
    for run in runs:
        for sid in run.solvers:
            _check_solver(sid)
    return runs, workers


def _check_solver(sid: str):
    name, _, arg = sid.partition(":")
    if name in ("maaipm", "maaipm-free") and arg in ("", *KERNELS):
        return
    if name in ("ibp", "ibp-free"):
        try:
            if float(arg) > 0:
                return
        except ValueError:
            pass
    if name == "kernel" and arg in KERNELS:
        return
    raise ValueError(f"unknown solver id {sid!r}")


def _sizes(spec: str, N: int, rng) -> list:
    if ".." in spec:
        lo, hi = (int(v) for v in spec.split(".."))
        return [int(v) for v in rng.integers(lo, hi + 1, N)]
    return [int(spec)] * N


def _instance(run: BenchRun, trial: int):
    rng = np.random.default_rng([run.seed, trial])
    measures = gaussian_measures(run.N, _sizes(run.m_t, run.N, rng), run.d, rng)
    problem = BarycenterProblem(measures, run.m)
    X = kmeans_support(measures, run.m, seed=run.seed + trial).points
    return problem, X


def _run_trial(run: BenchRun, sid: str, trial: int) -> dict:
    problem, X = _instance(run, trial)
    name, _, arg = sid.partition(":")
    rec = {"solver": sid, "trial": trial}
    t0 = time.perf_counter()
    if name == "kernel":
        geom = build_geometry(problem)
        rng = np.random.default_rng([run.seed, trial, 1])
        d = np.exp(rng.uniform(np.log(1e-3), np.log(1e3), geom.n_col))
        f = rng.standard_normal(geom.n_row_bar)
        t0 = time.perf_counter()
        fac = factorize(geom, d, arg)
        z = fac.solve(f)
        rec["time"] = time.perf_counter() - t0
        rec.update(objective=float("nan"), iterations=1,
                   feasibility_error=float(np.linalg.norm(fac.apply(z) - f) / np.linalg.norm(f)))
        return rec
    if name == "maaipm":
        sol = solve_fixed_support(problem, X, SolveOptions(tol=run.tol, kernel=arg or "auto"))
    elif name == "maaipm-free":
        sol = solve_free_support(problem, X, Schedule(jumps=run.jumps, seed=run.seed + trial),
                                 SolveOptions(tol=run.tol, kernel=arg or "auto"))
    elif name == "ibp":
        sol = ibp_solve(problem, X, float(arg))
    else:
        sol = ibp_free_support(problem, X, float(arg), outer_iters=run.outer_iters)
    rec["time"] = time.perf_counter() - t0
    rec.update(objective=sol.objective, iterations=sol.iterations,
               feasibility_error=sol.feasibility_error, converged=bool(sol.converged))
    if run.reference and name in ("maaipm", "ibp"):
        rec["reference"] = reference_solve(problem, X).objective
    elif run.reference and name in ("maaipm-free", "ibp-free"):
        ref = solve_free_support(problem, X, Schedule(jumps=0, seed=run.seed + trial),
                                 SolveOptions(tol=1e-9))
        rec["reference"] = ref.objective
    if "reference" in rec:
        rec["normalized_obj"] = normalized_objective(rec["objective"], rec["reference"])
    return rec


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float) or isinstance(v, np.floating):
        return f"{float(v):.9g}"
    return str(v)


def run_bench(runs, workers=1, json_dir=None) -> list:
    """Execute every (run, solver, trial) and aggregate one row per
    (run, solver)."""
    jobs = [(k, run, sid, t) for k, run in enumerate(runs)
            for sid in run.solvers for t in range(run.trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_trial, *zip(*[(r, s, t) for _, r, s, t in jobs])))
    else:
        results = [_run_trial(r, s, t) for _, r, s, t in jobs]
    rows, by_key, last_time = [], {}, {}
    for (k, run, sid, t), rec in zip(jobs, results):
        by_key.setdefault((k, sid), []).append(rec)
    for k, run in enumerate(runs):
        section = []
        for sid in run.solvers:
            recs = by_key[(k, sid)]
            times = np.array([r["time"] for r in recs])
            med = float(np.median(times))
            key = (sid, run.m, run.m_t, run.d)
            ratio = med / last_time[key] if key in last_time else float("nan")
            last_time[key] = med
            row = {"solver": sid, "N": run.N, "m": run.m, "m_t": run.m_t,
                   "trials": run.trials, "median_time": med, "mean_time": float(times.mean()),
                   "objective": float(np.mean([r["objective"] for r in recs])),
                   "normalized_obj": float(np.mean([r.get("normalized_obj", np.nan)
                                                    for r in recs])),
                   "feasibility_error": float(np.mean([r["feasibility_error"] for r in recs])),
                   "time_ratio": ratio}
            rows.append(row)
            section.append({"summary": row, "trials": recs})
        if json_dir is not None:
            Path(json_dir).mkdir(parents=True, exist_ok=True)
            formats.write_json(Path(json_dir) / f"run{k:03d}.json",
                               {"run": {kk: getattr(run, kk) for kk in _RUN_KEYS},
                                "results": section})
    return rows


def format_tsv(rows) -> str:
    lines = ["\t".join(TSV_COLUMNS)]
    lines += ["\t".join(_fmt(row[c]) for c in TSV_COLUMNS) for row in rows]
    return "\n".join(lines) + "\n"


def cmd_bench(args) -> int:
    with open(args.config) as fh:
        runs, workers = parse_config(fh.read())
    if args.workers is not None:
        workers = args.workers
    rows = run_bench(runs, workers=workers, json_dir=args.json_dir)
    text = format_tsv(rows)
    if args.tsv:
        Path(args.tsv).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wassbary", description="Wasserstein barycenters by interior-point methods")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    s = sub.add_parser("solve-fixed", help="barycenter on a given support")
    s.add_argument("measures", nargs="+")
    s.add_argument("--support", help="support points (JSON/CSV)")
    s.add_argument("--kmeans", type=int, metavar="M", help="k-means support of size M")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tol", type=float, default=5e-5)
    s.add_argument("--max-iter", type=int, default=200)
    s.add_argument("--kernel", choices=("auto",) + KERNELS, default="auto")
    s.add_argument("--out", required=True)
    s.add_argument("--plans", help="also write the transport plans here")
    s.set_defaults(func=cmd_solve_fixed)

    s = sub.add_parser("solve-free", help="free-support barycenter")
    s.add_argument("measures", nargs="+")
    s.add_argument("--m", type=int, required=True)
    s.add_argument("--init", help="starting support (default: weighted k-means)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--jumps", type=int, default=3)
    s.add_argument("--period", type=int, default=5)
    s.add_argument("--tol", type=float, default=5e-5)
    s.add_argument("--out", required=True)
    s.add_argument("--plans")
    s.add_argument("--log", help="write the phase log here as well")
    s.set_defaults(func=cmd_solve_free)

    s = sub.add_parser("bench", help="benchmark harness")
    s.add_argument("config")
    s.add_argument("--tsv", help="write the table here instead of stdout")
    s.add_argument("--json-dir", help="per-run JSON records")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("render", help="render a 2-D barycenter as PGM")
    s.add_argument("solution")
    s.add_argument("--grid", required=True, metavar="WxH")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("convert", help="IDX images to measure JSON files")
    s.add_argument("idx")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--limit", type=int)
    s.add_argument("--drop-zeros", action="store_true")
    s.set_defaults(func=cmd_convert)

    s = sub.add_parser("rescore", help="recompute objective and feasibility")
    s.add_argument("solution")
    s.add_argument("plans")
    s.add_argument("measures", nargs="+")
    s.set_defaults(func=cmd_rescore)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(f"wassbary: error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as err:  # --help
        return int(err.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ValueError, OSError, KeyError, KernelError,
            IbpUnderflowError, json.JSONDecodeError) as err:
        print(f"wassbary: error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
