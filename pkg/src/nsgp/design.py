"""Sequential design by active learning MacKay (ALM).

The loop scores a candidate pool by aggregated predictive variance, runs the
simulator at the maximizer, assimilates the new pair into the particle set,
and removes the chosen point from the pool.  The pool is generated once per
run.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .kernels import DEFAULT_NUGGET
from .particles import (
    AGGREGATIONS,
    AggregatedPrediction,
    aggregate_predict,
    init_particles,
    make_streams,
    rejuvenate,
    update,
)
from .predict import Dataset, PriorConfig
from .testbed import eval_grid, latin_hypercube, rmse

POOL_KINDS = ("grid", "lhd", "explicit", "remaining")
INITIAL_KINDS = ("lhd", "subset", "explicit")
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class PoolSpec:
    """Candidate pool: ``grid`` (``size`` per axis), ``lhd`` (``size`` points),
    ``explicit`` (``points``), or ``remaining`` (the unused part of the point
    list an initial subset was drawn from)."""

    kind: str = "lhd"
    size: int = 1000
    points: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in POOL_KINDS:
            raise ValueError(f"pool kind must be one of {POOL_KINDS}, got {self.kind!r}")
        if self.kind in ("grid", "lhd") and self.size < 1:
            raise ValueError("pool size must be at least 1")
        if self.kind == "explicit" and (self.points is None or len(self.points) == 0):
            raise ValueError("explicit pool needs at least one point")


@dataclass(frozen=True)
class DesignConfig:
    """Settings of one sequential-design run.

    ``initial = "lhd"`` draws a fresh Latin hypercube of ``t0`` points;
    ``initial = "subset"`` draws ``t0`` points at random from ``points``;
    ``initial = "explicit"`` starts from exactly ``points`` (``t0`` must equal
    their number).
    The loop stops when ``T`` points are in the design or, if ``threshold`` is
    set, once the largest aggregated sd over the pool falls below it.
    """

    t0: int
    T: int
    pool: PoolSpec = PoolSpec()
    initial: str = "lhd"
    points: np.ndarray | None = None
    threshold: float | None = None
    aggregation: str = "sd-plus-var"
    n_particles: int = 1000
    n_moves: int = 1
    init_moves: int = 0
    rmse_every: int = 1

    def validate(self, p: int) -> None:
        if self.t0 < p + 2:
            raise ValueError(f"t0 must be at least p+2 = {p + 2}, got {self.t0}")
        if self.T < self.t0:
            raise ValueError(f"budget T={self.T} is smaller than t0={self.t0}")
        if self.threshold is not None and not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
        if self.initial not in INITIAL_KINDS:
            raise ValueError(f"initial design must be one of {INITIAL_KINDS}")
        if self.initial == "subset" and (self.points is None or len(self.points) < self.t0):
            raise ValueError("initial subset needs a point list with at least t0 points")
        if self.initial == "explicit" and (self.points is None or len(self.points) != self.t0):
            raise ValueError("explicit initial design must have exactly t0 points")
        if self.pool.kind == "remaining" and self.initial != "subset":
            raise ValueError("a 'remaining' pool requires initial = subset")
        if self.n_particles < 1 or self.n_moves < 0 or self.init_moves < 0 or self.rmse_every < 0:
            raise ValueError("particle count must be positive and move counts non-negative")


@dataclass(frozen=True)
class TraceRecord:
    iter: int
    t: int
    x: np.ndarray
    f: float
    max_sd: float
    rmse: float | None
    seconds: float


@dataclass
class DesignTrace:
    p: int
    records: list = field(default_factory=list)
    initial_X: np.ndarray | None = None
    initial_F: np.ndarray | None = None
    initial_rmse: float | None = None
    final_rmse: float | None = None
    final_max_sd: float | None = None
    final_prediction: AggregatedPrediction | None = None
    eval_points: np.ndarray | None = None
    stopped_by: str = "budget"
    degeneracy_events: list = field(default_factory=list)
    has_truth: bool = False
    particles: object = field(default=None, repr=False)

    @property
    def selected(self) -> np.ndarray:
        return np.array([r.x for r in self.records]).reshape(-1, self.p)

    def header(self) -> list:
        return ["iter", "t"] + [f"x{l + 1}" for l in range(self.p)] + ["f", "max_sd", "rmse", "seconds"]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header())
            for r in self.records:
                w.writerow(
                    [r.iter, r.t, *(fmt(v) for v in r.x), fmt(r.f), fmt(r.max_sd),
                     "" if r.rmse is None else fmt(r.rmse), fmt(r.seconds)]
                )


def fmt(v: float) -> str:
    """Shortest round-tripping text for a float."""
    return repr(float(v))


def pool_make(spec: PoolSpec, p: int, bounds, rng: np.random.Generator, remaining=None) -> np.ndarray:
    bounds = np.asarray(bounds, dtype=float).reshape(p, 2)
    if spec.kind == "grid":
        if spec.size < 2:
            raise ValueError("grid pool needs at least 2 points per axis")
        return eval_grid(bounds, spec.size)
    if spec.kind == "lhd":
        return latin_hypercube(spec.size, p, bounds, rng)
    if spec.kind == "explicit":
        pts = np.asarray(spec.points, dtype=float).reshape(-1, p)
        return pts.copy()
    if remaining is None:
        raise ValueError("'remaining' pool needs the unused points of the initial list")
    return np.asarray(remaining, dtype=float).reshape(-1, p).copy()


def select_max(scores) -> int:
    """Index of the largest score; near-ties (relative 1e-12) go to the lowest index."""
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise ValueError("empty candidate pool")
    best = scores.max()
    return int(np.flatnonzero(scores >= best - TIE_RTOL * max(1.0, abs(best)))[0])


def alm_select(ps, candidates, aggregation: str = "sd-plus-var"):
    """Candidate with the largest aggregated predictive variance.

    Returns ``(index, point, variance)``.
    """
    candidates = np.asarray(candidates, dtype=float)
    if candidates.size == 0:
        raise ValueError("empty candidate pool")
    candidates = candidates.reshape(-1, ps.p)
    sd = aggregate_predict(ps, candidates, aggregation).sd
    var = sd * sd
    i = select_max(var)
    return i, candidates[i].copy(), float(var[i])


def _evaluate(simulator, x) -> float:
    y = float(simulator(x))
    if not math.isfinite(y):
        raise ValueError(f"simulator returned {y} at input {np.asarray(x).tolist()}")
    return y


def run_sequential(
    simulator: Callable[[np.ndarray], float],
    cfg: DesignConfig,
    bounds,
    prior: PriorConfig = PriorConfig(),
    mode: str = "nonstationary",
    seed: int = 0,
    truth: Callable[[np.ndarray], np.ndarray] | None = None,
    eval_points=None,
    nugget: float = DEFAULT_NUGGET,
    form: str = "exact",
    threads: int = 1,
    timing: bool = True,
) -> DesignTrace:
    """Run the ALM loop and return its trace.

    ``truth`` (vectorized) and ``eval_points`` enable the RMSE column; the
    final aggregated prediction is computed on ``eval_points`` when given.
    With ``timing=False`` the seconds column is zero, making traces
    byte-reproducible.
    """
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    p = bounds.shape[0]
    cfg.validate(p)
    streams = make_streams(seed)
    rng = streams["design"]

    remaining = None
    if cfg.initial == "lhd":
        X0 = latin_hypercube(cfg.t0, p, bounds, rng)
    elif cfg.initial == "explicit":
        X0 = np.asarray(cfg.points, dtype=float).reshape(-1, p).copy()
    else:
        pts = np.asarray(cfg.points, dtype=float).reshape(-1, p)
        order = rng.permutation(len(pts))
        X0, remaining = pts[order[: cfg.t0]], pts[np.sort(order[cfg.t0 :])]
    pool = pool_make(cfg.pool, p, bounds, rng, remaining)
    if cfg.threshold is None and len(pool) < cfg.T - cfg.t0:
        raise ValueError(f"candidate pool has {len(pool)} points but the budget needs {cfg.T - cfg.t0}")
    F0 = np.array([_evaluate(simulator, x) for x in X0])

    ps = init_particles(
        Dataset(X0, F0), prior, cfg.n_particles, mode, nugget=nugget, form=form, threads=threads, streams=streams
    )
    if cfg.init_moves:
        rejuvenate(ps, cfg.init_moves)

    use_truth = truth is not None and eval_points is not None
    if use_truth:
        eval_points = np.asarray(eval_points, dtype=float).reshape(-1, p)
        truth_values = np.asarray(truth(eval_points), dtype=float)

    def current_rmse():
        return rmse(aggregate_predict(ps, eval_points, cfg.aggregation).mean, truth_values)

    trace = DesignTrace(p=p, initial_X=X0, initial_F=F0, has_truth=use_truth)
    if use_truth:
        trace.initial_rmse = current_rmse()

    it = 0
    while ps.t < cfg.T and len(pool):
        start = time.perf_counter()
        sd = aggregate_predict(ps, pool, cfg.aggregation).sd
        max_sd = float(sd.max())
        if cfg.threshold is not None and max_sd < cfg.threshold:
            trace.stopped_by = "threshold"
            break
        i = select_max(sd * sd)
        x = pool[i].copy()
        y = _evaluate(simulator, x)
        update(ps, x, y, cfg.n_moves)
        pool = np.delete(pool, i, axis=0)
        it += 1
        err = None
        if use_truth and cfg.rmse_every and (it % cfg.rmse_every == 0 or ps.t == cfg.T):
            err = current_rmse()
        seconds = time.perf_counter() - start if timing else 0.0
        trace.records.append(TraceRecord(it, ps.t, x, y, max_sd, err, seconds))
    else:
        if ps.t < cfg.T:
            trace.stopped_by = "pool exhausted"

    if eval_points is not None:
        eval_points = np.asarray(eval_points, dtype=float).reshape(-1, p)
        trace.eval_points = eval_points
        trace.final_prediction = aggregate_predict(ps, eval_points, cfg.aggregation)
        trace.final_max_sd = float(trace.final_prediction.sd.max()) if len(eval_points) else None
        if use_truth:
            trace.final_rmse = rmse(trace.final_prediction.mean, truth_values)
    trace.degeneracy_events = list(ps.degeneracy_log)
    trace.particles = ps
    return trace
