"""Synthetic truth functions, space-filling designs, and gridded truths.

The 2-D ``menhir2``, ``building2`` and ``well2`` surfaces are
reconstructions (the source defines them only by picture): ``building2`` and
``well2`` are the 6-D formulas restricted to two inputs, and ``menhir2`` is an
isolated circular peak of height 2 centred in the unit square.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator


class OutOfBoundsError(ValueError):
    pass


def _peak(X):
    x = X[:, 0]
    return np.sin(x) + 2.0 * np.exp(-30.0 * x**2)


def _jump(X):
    return np.where(X[:, 0] > 0.0, 1.0, 0.0)


def _building(X):
    w = (1.0 / np.arange(1, X.shape[1] + 1)) ** 2
    inside = np.all(X > 0.25, axis=1)
    return np.where(inside, np.exp(X @ w), 0.0)


def _well(X, active):
    r2 = np.sum((X[:, :active] - 0.5) ** 2, axis=1)
    return np.where((r2 > 0.025) & (r2 < 0.25), 1.0, 0.0)


def _menhir(X):
    r2 = np.sum((X - 0.5) ** 2, axis=1)
    return 2.0 * np.exp(-r2 / 0.005)


@dataclass(frozen=True)
class TruthFunction:
    name: str
    dim: int
    bounds: np.ndarray
    evaluator: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    description: str = ""
    reconstructed: bool = False

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        check_in_bounds(X, self.bounds, self.name)
        return self.evaluator(X)


def check_in_bounds(X, bounds, name="function"):
    if X.shape[1] != bounds.shape[0]:
        raise ValueError(f"{name} takes {bounds.shape[0]} inputs, got points of dimension {X.shape[1]}")
    bad = np.any((X < bounds[:, 0]) | (X > bounds[:, 1]), axis=1)
    if bad.any():
        raise OutOfBoundsError(f"{name}: point {X[np.argmax(bad)]} outside bounds {bounds.tolist()}")


def _box(p, lo=0.0, hi=1.0):
    return np.tile([lo, hi], (p, 1)).astype(float)


FUNCTIONS = {
    f.name: f
    for f in [
        TruthFunction("peak", 1, _box(1, -2, 2), _peak, "sin(x) + 2 exp(-30 x^2) on [-2, 2]"),
        TruthFunction("jump", 1, _box(1, -1, 1), _jump, "0 for x <= 0, 1 for x > 0 on [-1, 1]"),
        TruthFunction(
            "menhir2", 2, _box(2), _menhir,
            "2 exp(-|x - (0.5, 0.5)|^2 / 0.005) on [0, 1]^2", reconstructed=True,
        ),
        TruthFunction(
            "building2", 2, _box(2), _building,
            "exp(x1 + x2/4) where x1, x2 > 0.25, else 0, on [0, 1]^2", reconstructed=True,
        ),
        TruthFunction(
            "well2", 2, _box(2), lambda X: _well(X, 2),
            "1 where 0.025 < |x - 0.5|^2 < 0.25, else 0, on [0, 1]^2", reconstructed=True,
        ),
        TruthFunction(
            "building6", 6, _box(6), _building,
            "exp(sum_i x_i / i^2) where all x_i > 0.25, else 0, on [0, 1]^6",
        ),
        TruthFunction(
            "well6", 6, _box(6), lambda X: _well(X, 4),
            "1 where 0.025 < sum_{i<=4} (x_i - 0.5)^2 < 0.25, else 0, on [0, 1]^6",
        ),
    ]
}


def get_function(name: str) -> TruthFunction:
    try:
        return FUNCTIONS[name]
    except KeyError:
        raise KeyError(f"unknown truth function {name!r}; available: {', '.join(FUNCTIONS)}") from None


def eval_truth(name: str, x) -> float:
    """Evaluate a named truth function at a single point."""
    f = get_function(name)
    return float(f(np.asarray(x, dtype=float).reshape(1, -1))[0])


def latin_hypercube(n: int, p: int, bounds, rng: np.random.Generator) -> np.ndarray:
    """n points with exactly one point per stratum on every axis, jittered within strata."""
    if n < 1:
        raise ValueError("latin_hypercube needs n >= 1")
    bounds = np.asarray(bounds, dtype=float).reshape(p, 2)
    u = np.empty((n, p))
    for l in range(p):
        u[:, l] = (rng.permutation(n) + rng.uniform(size=n)) / n
    return bounds[:, 0] + u * (bounds[:, 1] - bounds[:, 0])


def eval_grid(bounds, per_axis_n: int) -> np.ndarray:
    """Full lattice with ``per_axis_n`` equally spaced values per axis, endpoints included.

    Row-major: the last axis varies fastest.
    """
    if per_axis_n < 2:
        raise ValueError("eval_grid needs at least 2 points per axis")
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    axes = [np.linspace(lo, hi, per_axis_n) for lo, hi in bounds]
    return np.array(list(itertools.product(*axes)))


def rmse(predicted, truth) -> float:
    predicted = np.asarray(predicted, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if predicted.shape != truth.shape:
        raise ValueError(f"length mismatch: {predicted.size} predictions, {truth.size} truth values")
    if predicted.size == 0:
        raise ValueError("rmse of empty vectors")
    return math.sqrt(float(np.mean((predicted - truth) ** 2)))


@dataclass(frozen=True)
class GriddedTruth:
    """Values on a 2-D rectilinear grid, bilinearly interpolated."""

    axis1: np.ndarray
    axis2: np.ndarray
    values: np.ndarray  # (len(axis1), len(axis2))
    name: str = "gridded"

    def __post_init__(self):
        for ax in (self.axis1, self.axis2):
            if ax.ndim != 1 or ax.size < 2 or np.any(np.diff(ax) <= 0):
                raise ValueError("grid axes must be strictly increasing with at least 2 nodes")
        if self.values.shape != (self.axis1.size, self.axis2.size):
            raise ValueError("value matrix does not match the axes")

    @property
    def dim(self) -> int:
        return 2

    @property
    def bounds(self) -> np.ndarray:
        return np.array([[self.axis1[0], self.axis1[-1]], [self.axis2[0], self.axis2[-1]]])

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        check_in_bounds(X, self.bounds, self.name)
        interp = RegularGridInterpolator((self.axis1, self.axis2), self.values, method="linear")
        return interp(X)


def load_gridded_truth(path) -> GriddedTruth:
    """Read an ``axis1,axis2,value`` CSV with one row per grid node."""
    path = Path(path)
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != ["axis1", "axis2", "value"]:
            raise ValueError(f"{path}: header must be 'axis1,axis2,value', got {','.join(header)!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            rows.append([float(v) for v in row])
    data = np.array(rows)
    if data.size == 0:
        raise ValueError(f"{path}: no grid nodes")
    a1, i1 = np.unique(data[:, 0], return_inverse=True)
    a2, i2 = np.unique(data[:, 1], return_inverse=True)
    if len(data) != a1.size * a2.size:
        raise ValueError(f"{path}: {len(data)} rows do not form a complete {a1.size}x{a2.size} grid")
    V = np.full((a1.size, a2.size), np.nan)
    V[i1, i2] = data[:, 2]
    if np.isnan(V).any():
        raise ValueError(f"{path}: duplicate or missing grid nodes")
    _check_file_order(data, path)
    return GriddedTruth(a1, a2, V, name=path.stem)


def _check_file_order(data, path):
    # each axis must be listed in strictly increasing order within its blocks
    a1 = data[:, 0]
    if np.any(np.diff(a1) < 0):
        raise ValueError(f"{path}: axis1 is not non-decreasing down the file")
    for v in np.unique(a1):
        a2 = data[a1 == v, 1]
        if np.any(np.diff(a2) <= 0):
            raise ValueError(f"{path}: axis2 not strictly increasing for axis1 = {v}")


def save_gridded_truth(path, axis1, axis2, values):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["axis1", "axis2", "value"])
        for i, x in enumerate(axis1):
            for j, y in enumerate(axis2):
                w.writerow([repr(float(x)), repr(float(y)), repr(float(values[i, j]))])
