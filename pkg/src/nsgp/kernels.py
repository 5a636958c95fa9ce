"""Squared-exponential correlation and Cholesky factors of correlation matrices.

These are the single-instance routines. The particle engine runs the same
arithmetic in batched form through :mod:`nsgp._backend`; the functions here
are kept simple so they can serve as a reference for the batched kernels.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular

logger = logging.getLogger(__name__)

DEFAULT_NUGGET = 1e-7
JITTER_FLOOR = 1e-10
JITTER_CAP = 1e-3


class FactorizationError(np.linalg.LinAlgError):
    """Raised when a correlation matrix cannot be factorized even with maximal jitter."""


def check_ranges(ranges) -> np.ndarray:
    ranges = np.asarray(ranges, dtype=float)
    if ranges.ndim != 1:
        raise ValueError("ranges must be a 1-D vector")
    if not np.all(np.isfinite(ranges)) or np.any(ranges < 0):
        raise ValueError(f"ranges must be finite and nonnegative, got {ranges}")
    return ranges


def sq_exp_corr(a, b, ranges) -> float:
    """exp(-sum_l phi_l (a_l - b_l)^2) for two points of equal dimension."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    ranges = check_ranges(ranges)
    if not (a.shape == b.shape == ranges.shape):
        raise ValueError(
            f"dimension mismatch: a{a.shape}, b{b.shape}, ranges{ranges.shape}"
        )
    return float(np.exp(-np.sum(ranges * (a - b) ** 2)))


def cross_corr(A, B, ranges) -> np.ndarray:
    """Correlation matrix between the rows of ``A`` (m, d) and ``B`` (n, d)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    ranges = check_ranges(ranges)
    if A.shape[1] != ranges.size or B.shape[1] != ranges.size:
        raise ValueError(
            f"dimension mismatch: points have {A.shape[1]}/{B.shape[1]} "
            f"coordinates, ranges has {ranges.size}"
        )
    d2 = np.zeros((A.shape[0], B.shape[0]))
    for l in range(ranges.size):
        d2 += ranges[l] * np.subtract.outer(A[:, l], B[:, l]) ** 2
    return np.exp(-d2)


def corr_matrix(points, ranges, nugget: float = 0.0) -> np.ndarray:
    """Symmetric correlation matrix of ``points`` with ``nugget`` on the diagonal."""
    K = cross_corr(points, points, ranges)
    K[np.diag_indices_from(K)] += nugget
    return K


@dataclass(frozen=True)
class CorrFactor:
    """Lower Cholesky factor of ``K + nugget * I``.

    ``nugget`` is the diagonal actually used, which is larger than the
    requested one when jitter had to be escalated.
    """

    chol: np.ndarray
    nugget: float
    logdet: float

    @property
    def order(self) -> int:
        return self.chol.shape[0]

    def reconstruct(self) -> np.ndarray:
        return self.chol @ self.chol.T


def jitter_schedule(nugget: float):
    """Diagonal values tried in order: the nugget, then x10 steps up to the cap."""
    jit = float(nugget)
    yield jit
    jit = max(jit, JITTER_FLOOR) if jit > 0 else JITTER_FLOOR
    if jit == nugget:
        jit *= 10.0
    while jit <= JITTER_CAP * (1 + 1e-9):
        yield jit
        jit *= 10.0


def factor_matrix(K0: np.ndarray, nugget: float = DEFAULT_NUGGET) -> CorrFactor:
    """Factorize a unit-diagonal correlation matrix plus nugget, escalating jitter."""
    if not np.all(np.isfinite(K0)):
        raise ValueError("correlation matrix has non-finite entries")
    t = K0.shape[0]
    for jit in jitter_schedule(nugget):
        K = K0.copy()
        K[np.diag_indices(t)] += jit
        try:
            L = cholesky(K, lower=True, check_finite=False)
        except LinAlgError:
            continue
        if jit != nugget:
            logger.warning("correlation factor needed jitter %.1e (nugget %.1e)", jit, nugget)
        return CorrFactor(L, jit, 2.0 * float(np.sum(np.log(np.diag(L)))))
    raise FactorizationError(
        f"correlation matrix of order {t} is not positive definite even with jitter {JITTER_CAP}"
    )


def build_factor(points, ranges, nugget: float = DEFAULT_NUGGET) -> CorrFactor:
    """Factor the correlation matrix of ``points`` (t, d) under ``ranges``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[0] < 1:
        raise ValueError("need at least one point")
    if not np.all(np.isfinite(points)):
        raise ValueError("points contain non-finite values")
    if nugget < 0:
        raise ValueError("nugget must be nonnegative")
    try:
        return factor_matrix(cross_corr(points, points, ranges), nugget)
    except FactorizationError as exc:
        raise FactorizationError(f"{exc}; design:\n{points}") from None


def extend_factor(f: CorrFactor, cross, self_corr: float = 1.0) -> CorrFactor:
    """Border the factor with one new point.

    ``cross`` holds the correlations between the new point and the existing
    ``t`` points; ``self_corr`` is the new point's correlation with itself
    (the factor's nugget is added on top).
    """
    cross = np.asarray(cross, dtype=float)
    t = f.order
    if cross.shape != (t,):
        raise ValueError(f"cross must have length {t}, got shape {cross.shape}")
    w = solve_triangular(f.chol, cross, lower=True, check_finite=False)
    d2 = self_corr + f.nugget - w @ w
    if not d2 > 0:
        raise FactorizationError(
            f"Schur complement {d2:.3e} is not positive; rebuild with jitter"
        )
    L = np.zeros((t + 1, t + 1))
    L[:t, :t] = f.chol
    L[t, :t] = w
    L[t, t] = np.sqrt(d2)
    return CorrFactor(L, f.nugget, f.logdet + float(np.log(d2)))


def solve_factor(f: CorrFactor, rhs) -> np.ndarray:
    """(K + nugget I)^{-1} rhs via two triangular solves."""
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != f.order:
        raise ValueError(f"rhs leading dimension {rhs.shape[0]} != factor order {f.order}")
    y = solve_triangular(f.chol, rhs, lower=True, check_finite=False)
    return solve_triangular(f.chol, y, lower=True, trans="T", check_finite=False)


def half_solve(f: CorrFactor, rhs) -> np.ndarray:
    """L^{-1} rhs, the whitened right-hand side."""
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != f.order:
        raise ValueError(f"rhs leading dimension {rhs.shape[0]} != factor order {f.order}")
    return solve_triangular(f.chol, rhs, lower=True, check_finite=False)
