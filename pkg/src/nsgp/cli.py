"""Command-line front end: ``nsgp fit | sequential | diagnose | list-functions``.

Exit codes: 0 when every output was written and is finite, 2 for invalid
configurations or missing input files, 1 for failures during a run.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import _backend
from .config import ConfigError, RunConfig, load_config
from .design import DesignConfig, PoolSpec, fmt, run_sequential
from .particles import aggregate_predict, init_particles, loo_residuals, make_streams, rejuvenate
from .predict import Dataset
from .testbed import FUNCTIONS, eval_grid, get_function, latin_hypercube, load_gridded_truth, rmse

logger = logging.getLogger("nsgp")

MAX_EVAL_POINTS = 1_000_000


class RunError(RuntimeError):
    pass


def version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


# ---------------------------------------------------------------- inputs


def resolve_truth(cfg: RunConfig):
    """(name, vectorized evaluator, bounds) for the configured truth."""
    if cfg.truth_function is not None:
        try:
            f = get_function(cfg.truth_function)
        except KeyError as exc:
            raise ConfigError(exc.args[0]) from None
        return f.name, f, f.bounds
    path = Path(cfg.truth_file)
    if not path.is_file():
        raise ConfigError(f"truth file not found: {path}")
    try:
        g = load_gridded_truth(path)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return g.name, g, g.bounds


def read_points(path, p: int) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"points file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    expected = [f"x{l + 1}" for l in range(p)]
    if not rows or [h.strip() for h in rows[0]] != expected:
        raise ConfigError(f"{path}: header must be {','.join(expected)}")
    try:
        pts = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if pts.ndim != 2 or pts.shape[1] != p or len(pts) == 0:
        raise ConfigError(f"{path}: expected rows of {p} numbers")
    return pts


def point_list(cfg: RunConfig, p: int, bounds) -> np.ndarray:
    """The fixed point list used by grid, file and subset initial designs."""
    if cfg.points_file is not None:
        return read_points(cfg.points_file, p)
    if cfg.grid_n is None:
        raise ConfigError("[design] needs grid_n or points_file")
    if cfg.grid_n < 2:
        raise ConfigError("[design] grid_n must be at least 2")
    return eval_grid(bounds, cfg.grid_n)


def eval_points(cfg: RunConfig, p: int, bounds, streams) -> np.ndarray:
    if cfg.eval_kind == "grid":
        if cfg.eval_size < 2:
            raise ConfigError("[eval] grid size must be at least 2")
        if cfg.eval_size**p > MAX_EVAL_POINTS:
            raise ConfigError(f"[eval] a {cfg.eval_size}-per-axis grid in {p} dimensions is too large; use kind = lhd")
        return eval_grid(bounds, cfg.eval_size)
    return latin_hypercube(cfg.eval_size, p, bounds, streams["eval"])


def fixed_design(cfg: RunConfig, p: int, bounds, streams) -> np.ndarray:
    """Initial design for fit and diagnose (the whole design is given up front)."""
    rng = streams["design"]
    if cfg.initial == "lhd":
        if cfg.t0 is None:
            raise ConfigError("[design] initial = lhd needs t0")
        return latin_hypercube(cfg.t0, p, bounds, rng)
    pts = point_list(cfg, p, bounds)
    if cfg.initial == "subset":
        if cfg.t0 is None or cfg.t0 > len(pts):
            raise ConfigError("[design] initial = subset needs t0 no larger than the point list")
        return pts[rng.permutation(len(pts))[: cfg.t0]]
    return pts


def design_config(cfg: RunConfig, p: int, bounds) -> DesignConfig:
    if cfg.budget is None and cfg.threshold is None:
        raise ConfigError("sequential runs need [design] budget or threshold")
    points = None
    if cfg.initial == "lhd":
        if cfg.t0 is None:
            raise ConfigError("[design] initial = lhd needs t0")
        initial, t0 = "lhd", cfg.t0
    elif cfg.initial == "subset":
        points, initial, t0 = point_list(cfg, p, bounds), "subset", cfg.t0
        if t0 is None:
            raise ConfigError("[design] initial = subset needs t0")
    else:
        points = point_list(cfg, p, bounds)
        initial, t0 = "explicit", len(points)
    if cfg.pool == "file":
        if cfg.pool_file is None:
            raise ConfigError("[design] pool = file needs pool_file")
        pool = PoolSpec("explicit", points=read_points(cfg.pool_file, p))
    else:
        pool = PoolSpec(cfg.pool, cfg.pool_size)
    budget = cfg.budget
    if budget is None:
        budget = t0 + (len(points) - t0 if cfg.pool == "remaining" else cfg.pool_size ** (p if cfg.pool == "grid" else 1))
    dc = DesignConfig(
        t0=t0, T=budget, pool=pool, initial=initial, points=points, threshold=cfg.threshold,
        aggregation=cfg.aggregation, n_particles=cfg.particles, n_moves=cfg.moves,
        init_moves=cfg.init_moves, rmse_every=cfg.rmse_every,
    )
    try:
        dc.validate(p)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return dc


# ---------------------------------------------------------------- outputs


def write_predictions(path, X, pred, truth_values=None) -> None:
    p = X.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{l + 1}" for l in range(p)] + ["mean", "sd"] + (["truth"] if truth_values is not None else []))
        for i in range(len(X)):
            row = [fmt(v) for v in X[i]] + [fmt(pred.mean[i]), fmt(pred.sd[i])]
            if truth_values is not None:
                row.append(fmt(truth_values[i]))
            w.writerow(row)


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def check_finite(summary: dict, *arrays) -> None:
    bad = [k for k, v in summary.items() if isinstance(v, float) and not np.isfinite(v)]
    if bad or any(not np.all(np.isfinite(a)) for a in arrays):
        raise RunError(f"non-finite results ({', '.join(bad) or 'predictions'})")


def write_manifest(out: Path, command: str, cfg: RunConfig, files: list) -> None:
    digests = {name: hashlib.sha256((out / name).read_bytes()).hexdigest() for name in files}
    manifest = {
        "artifact": "nsgp",
        "version": version(),
        "command": command,
        "seed": cfg.seed,
        "config": cfg.to_sections(),
        "backend": _backend.NAME,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "outputs": digests,
    }
    write_json(out / "manifest.json", manifest)


# ---------------------------------------------------------------- commands


def _fit_particles(cfg: RunConfig, streams):
    name, truth, bounds = resolve_truth(cfg)
    p = bounds.shape[0]
    X = fixed_design(cfg, p, bounds, streams)
    F = truth(X)
    try:
        ps = init_particles(
            Dataset(X, F), cfg.prior, cfg.particles, cfg.mode, nugget=cfg.nugget,
            form=cfg.predictive, threads=cfg.threads, streams=streams,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    rejuvenate(ps, cfg.fit_moves)
    return name, truth, bounds, ps


def cmd_fit(cfg: RunConfig, out: Path) -> None:
    streams = make_streams(cfg.seed)
    name, truth, bounds, ps = _fit_particles(cfg, streams)
    Xe = eval_points(cfg, ps.p, bounds, streams)
    pred = aggregate_predict(ps, Xe, cfg.aggregation)
    tv = truth(Xe)
    summary = {
        "command": "fit", "mode": cfg.mode, "seed": cfg.seed, "truth": name, "particles": ps.N,
        "t": ps.t, "p": ps.p, "aggregation": cfg.aggregation, "predictive": cfg.predictive,
        "eval_points": len(Xe), "rmse": rmse(pred.mean, tv), "max_sd": float(pred.sd.max()),
        "mean_sd": float(pred.sd.mean()), "degeneracy_warnings": len(ps.degeneracy_log),
    }
    check_finite(summary, pred.mean, pred.sd)
    write_predictions(out / "predictions.csv", Xe, pred, tv)
    write_json(out / "summary.json", summary)
    write_manifest(out, "fit", cfg, ["predictions.csv", "summary.json"])


def cmd_sequential(cfg: RunConfig, out: Path) -> None:
    streams = make_streams(cfg.seed)
    name, truth, bounds = resolve_truth(cfg)
    p = bounds.shape[0]
    dc = design_config(cfg, p, bounds)
    Xe = eval_points(cfg, p, bounds, streams)

    def simulator(x):
        return float(truth(np.asarray(x)[None, :])[0])

    try:
        trace = run_sequential(
            simulator, dc, bounds, cfg.prior, cfg.mode, cfg.seed, truth=truth, eval_points=Xe,
            nugget=cfg.nugget, form=cfg.predictive, threads=cfg.threads, timing=cfg.timing,
        )
    except ValueError as exc:
        raise RunError(str(exc)) from exc
    pred = trace.final_prediction
    summary = {
        "command": "sequential", "mode": cfg.mode, "seed": cfg.seed, "truth": name,
        "particles": cfg.particles, "p": p, "t0": dc.t0, "budget": dc.T, "t": trace.particles.t,
        "iterations": len(trace.records), "stopped_by": trace.stopped_by,
        "aggregation": cfg.aggregation, "predictive": cfg.predictive, "eval_points": len(Xe),
        "initial_rmse": trace.initial_rmse, "final_rmse": trace.final_rmse,
        "max_sd": trace.final_max_sd, "mean_sd": float(pred.sd.mean()),
        "degeneracy_warnings": len(trace.degeneracy_events),
    }
    check_finite(summary, pred.mean, pred.sd)
    trace.write_csv(out / "trace.csv")
    write_predictions(out / "predictions.csv", Xe, pred, truth(Xe))
    write_json(out / "summary.json", summary)
    write_manifest(out, "sequential", cfg, ["trace.csv", "predictions.csv", "summary.json"])


def cmd_diagnose(cfg: RunConfig, out: Path) -> None:
    streams = make_streams(cfg.seed)
    name, truth, bounds, ps = _fit_particles(cfg, streams)
    if ps.t < ps.p + 3:
        raise ConfigError(f"diagnose needs at least p+3 = {ps.p + 3} design points, got {ps.t}")
    r = loo_residuals(ps)
    if not np.all(np.isfinite(r)):
        raise RunError("non-finite leave-one-out residuals")
    with open(out / "loocv.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index"] + [f"x{l + 1}" for l in range(ps.p)] + ["f", "residual", "beyond2", "beyond3"])
        for i in range(ps.t):
            w.writerow(
                [i, *(fmt(v) for v in ps.X[i]), fmt(ps.F[i]), fmt(r[i]), int(abs(r[i]) > 2), int(abs(r[i]) > 3)]
            )
    summary = {
        "command": "diagnose", "mode": cfg.mode, "seed": cfg.seed, "truth": name, "particles": ps.N,
        "t": ps.t, "p": ps.p, "beyond2": int(np.sum(np.abs(r) > 2)), "beyond3": int(np.sum(np.abs(r) > 3)),
        "max_abs_residual": float(np.max(np.abs(r))), "argmax_abs_residual": int(np.argmax(np.abs(r))),
    }
    write_json(out / "summary.json", summary)
    write_manifest(out, "diagnose", cfg, ["loocv.csv", "summary.json"])


def cmd_list_functions() -> None:
    for f in FUNCTIONS.values():
        box = " x ".join(f"[{lo:g}, {hi:g}]" for lo, hi in f.bounds)
        tag = " (reconstruction)" if f.reconstructed else ""
        print(f"{f.name:<10} p={f.dim}  {box}  {f.description}{tag}")


COMMANDS = {"fit": cmd_fit, "sequential": cmd_sequential, "diagnose": cmd_diagnose}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nsgp", description="Nonstationary GP emulation by particle learning.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [
        ("fit", "fit on a fixed design and predict on the evaluation points"),
        ("sequential", "run an ALM sequential design"),
        ("diagnose", "leave-one-out standardized residuals"),
    ]:
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="INI config or a run manifest (.json)")
        p.add_argument("--seed", type=int, help="override [run] seed")
        p.add_argument("--mode", choices=["stationary", "nonstationary"], help="override [run] mode")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--threads", type=int, help="override [run] threads")
    sub.add_parser("list-functions", help="list the built-in truth functions")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list-functions":
        cmd_list_functions()
        return 0
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.mode is not None:
            cfg.mode = args.mode
        if args.threads is not None:
            cfg.threads = args.threads
        cfg.validate()
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"nsgp {args.command}: configuration error: {exc}", file=sys.stderr)
        return 2
    except (RunError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"nsgp {args.command}: run failed: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"nsgp {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
