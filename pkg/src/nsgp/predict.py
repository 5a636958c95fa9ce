"""Marginalized GP prediction with a linear mean field.

The regression coefficients carry a flat prior and the scale an
inverse-gamma IG(a/2, b/2) prior; both are integrated out, which leaves a
Student-t predictive law.  Two forms are available:

``"exact"``
    the full posterior predictive: ``a + t - p - 1`` degrees of freedom and
    a scale that includes the uncertainty of the regression coefficients.
``"plugin"``
    the plug-in form with ``t - p - 1`` degrees of freedom and no
    coefficient-uncertainty term in the scale.

Both share the same location.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular
from scipy.special import gammaln

from .kernels import (
    DEFAULT_NUGGET,
    CorrFactor,
    build_factor,
    cross_corr,
    half_solve,
)

PREDICTIVE_FORMS = ("exact", "plugin")
VARIANCE_FLOOR = 1e-12


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    """Design inputs ``X`` (t, p) and simulator outputs ``F`` (t,)."""

    X: np.ndarray
    F: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        F = np.asarray(self.F, dtype=float).reshape(-1)
        if X.shape[0] != F.shape[0]:
            raise ValueError(f"{X.shape[0]} inputs but {F.shape[0]} outputs")
        if X.shape[0] < 1:
            raise ValueError("dataset must hold at least one point")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(F))):
            raise ValueError("dataset contains non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "F", F)

    @property
    def size(self) -> int:
        return self.F.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def append(self, x, y) -> "Dataset":
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return Dataset(np.vstack([self.X, x]), np.append(self.F, y))

    def drop(self, i: int) -> "Dataset":
        return Dataset(np.delete(self.X, i, axis=0), np.delete(self.F, i))


@dataclass(frozen=True)
class PriorConfig:
    """Priors: sigma^2 ~ IG(a/2, b/2); log phi ~ N(mu_phi, nu_phi); log phi~ ~ N(m_phit, v_phit).

    ``nu_phi`` and ``v_phit`` are variances.
    """

    a: float = 4.0
    b: float = 2.0
    mu_phi: float = 0.5
    nu_phi: float = 0.25
    m_phit: float = 0.5
    v_phit: float = 0.25

    def __post_init__(self):
        for name in ("a", "b", "nu_phi", "v_phit"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"prior parameter {name} must be positive, got {value}")


@dataclass(frozen=True)
class StudentTPredictive:
    """Location-scale Student-t; ``variance`` is the squared scale."""

    dof: float
    mean: float
    variance: float

    @property
    def sd(self) -> float:
        return math.sqrt(max(self.variance, 0.0))


def linear_basis(X) -> np.ndarray:
    """Rows h(x) = [1, x_1, ..., x_p]."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.hstack([np.ones((X.shape[0], 1)), X])


def residual_dof(t: int, p: int) -> int:
    return t - p - 1


def predictive_dof(t: int, p: int, prior: PriorConfig, form: str = "exact") -> float:
    nu = residual_dof(t, p)
    if form == "exact":
        return prior.a + nu
    if form == "plugin":
        return float(nu)
    raise ValueError(f"unknown predictive form {form!r}; expected one of {PREDICTIVE_FORMS}")


@dataclass(frozen=True)
class _GLS:
    """Generalized least-squares pieces shared by prediction and the marginal likelihood."""

    A: np.ndarray  # L^{-1} H
    resid: np.ndarray  # L^{-1} (F - H beta)
    beta: np.ndarray
    psi_inv_chol: tuple
    psi_inv_logdet: float
    Phi: float


def _gls(data: Dataset, factor: CorrFactor) -> _GLS:
    if factor.order != data.size:
        raise ValueError(f"factor order {factor.order} != data size {data.size}")
    H = linear_basis(data.X)
    A = half_solve(factor, H)
    c = half_solve(factor, data.F)
    psi_inv = A.T @ A
    try:
        cf = cho_factor(psi_inv, lower=True, check_finite=False)
    except LinAlgError:
        raise LinAlgError("H^T K^-1 H is singular; design does not identify the linear mean") from None
    beta = cho_solve(cf, A.T @ c, check_finite=False)
    resid = c - A @ beta
    return _GLS(
        A=A,
        resid=resid,
        beta=beta,
        psi_inv_chol=cf,
        psi_inv_logdet=2.0 * float(np.sum(np.log(np.diag(cf[0])))),
        Phi=float(resid @ resid),
    )


def _require_dof(t: int, p: int):
    if residual_dof(t, p) < 1:
        raise InsufficientDataError(
            f"insufficient data for marginalized predictive: t={t} needs to exceed p+1={p + 1}"
        )


def marginal_predictive(
    data: Dataset,
    factor: CorrFactor,
    prior: PriorConfig,
    cross,
    self_corr: float,
    h_query,
    form: str = "exact",
) -> StudentTPredictive:
    """Student-t predictive at one query point.

    ``cross`` are the correlations between the query and the ``t`` design
    points, ``self_corr`` the query's own correlation (1 + nugget for a
    noisy read-out, 1 for the latent surface) and ``h_query`` its basis row.
    """
    t, p = data.size, data.dim
    _require_dof(t, p)
    cross = np.asarray(cross, dtype=float)
    h_query = np.asarray(h_query, dtype=float)
    if cross.shape != (t,) or h_query.shape != (p + 1,):
        raise ValueError("cross must have length t and h_query length p+1")
    g = _gls(data, factor)
    w = half_solve(factor, cross)
    mean = float(h_query @ g.beta + w @ g.resid)
    s = self_corr - float(w @ w)
    dof = predictive_dof(t, p, prior, form)
    if form == "exact":
        u = h_query - g.A.T @ w
        v = solve_triangular(g.psi_inv_chol[0], u, lower=True, check_finite=False)
        s += float(v @ v)
    var = (prior.b + g.Phi) * s / (prior.a + residual_dof(t, p))
    return StudentTPredictive(dof=dof, mean=mean, variance=max(var, 0.0))


def student_t_logdensity(pred: StudentTPredictive, y: float) -> float:
    """Log density at ``y`` of the location-scale t with scale^2 = ``pred.variance``."""
    nu = pred.dof
    s2 = max(pred.variance, VARIANCE_FLOOR)
    z2 = (y - pred.mean) ** 2 / s2
    return float(
        gammaln((nu + 1) / 2)
        - gammaln(nu / 2)
        - 0.5 * math.log(nu * math.pi * s2)
        - (nu + 1) / 2 * math.log1p(z2 / nu)
    )


def student_t_logpdf(y, mean, variance, dof) -> np.ndarray:
    """Elementwise version of :func:`student_t_logdensity` for broadcastable arrays."""
    mean = np.asarray(mean, dtype=float)
    s2 = np.maximum(np.asarray(variance, dtype=float), VARIANCE_FLOOR)
    z2 = (np.asarray(y, dtype=float) - mean) ** 2 / s2
    return (
        gammaln((dof + 1) / 2)
        - gammaln(dof / 2)
        - 0.5 * np.log(dof * math.pi * s2)
        - (dof + 1) / 2 * np.log1p(z2 / dof)
    )


def log_marginal_likelihood(data: Dataset, factor: CorrFactor, prior: PriorConfig) -> float:
    """log p(F | X, K) with the coefficients and scale integrated out."""
    t, p = data.size, data.dim
    _require_dof(t, p)
    g = _gls(data, factor)
    nu = residual_dof(t, p)
    a, b = prior.a, prior.b
    return float(
        -0.5 * nu * math.log(2 * math.pi)
        - 0.5 * factor.logdet
        - 0.5 * g.psi_inv_logdet
        + 0.5 * a * math.log(b / 2)
        - gammaln(a / 2)
        + gammaln((a + nu) / 2)
        - 0.5 * (a + nu) * math.log((b + g.Phi) / 2)
    )


def latent_krige(latent_values, factor: CorrFactor, cross, self_corr: float = 1.0):
    """Zero-mean, unit-scale kriging of the latent surface: returns (mean, variance)."""
    g = np.asarray(latent_values, dtype=float)
    cross = np.asarray(cross, dtype=float)
    if g.shape != (factor.order,) or cross.shape != (factor.order,):
        raise ValueError("latent values and cross must match the factor order")
    w = half_solve(factor, cross)
    mu = float(w @ half_solve(factor, g))
    var = self_corr - float(w @ w)
    return mu, max(var, 0.0)


def augment(X, Z) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.hstack([X, np.asarray(Z, dtype=float).reshape(-1, 1)])


def loo_cv_residuals(
    data: Dataset,
    ranges,
    latent_values=None,
    prior: PriorConfig = PriorConfig(),
    nugget: float = DEFAULT_NUGGET,
    form: str = "exact",
) -> np.ndarray:
    """Leave-one-out standardized residuals with hyperparameters held fixed.

    ``ranges`` has length p+1 when ``latent_values`` are given (the last entry
    acting on the latent coordinate) and length p otherwise.
    """
    t, p = data.size, data.dim
    if t < p + 3:
        raise InsufficientDataError(f"leave-one-out needs t >= p+3 = {p + 3}, got t={t}")
    ranges = np.asarray(ranges, dtype=float)
    pts = data.X if latent_values is None else augment(data.X, latent_values)
    if ranges.size != pts.shape[1]:
        raise ValueError(f"ranges has length {ranges.size}, points have {pts.shape[1]} coordinates")
    H = linear_basis(data.X)
    out = np.empty(t)
    for i in range(t):
        keep = np.arange(t) != i
        fold = Dataset(data.X[keep], data.F[keep])
        try:
            f = build_factor(pts[keep], ranges, nugget)
            cross = cross_corr(pts[i : i + 1], pts[keep], ranges)[0]
            pred = marginal_predictive(fold, f, prior, cross, 1.0 + f.nugget, H[i], form)
        except (ValueError, LinAlgError) as exc:
            raise ValueError(f"leave-one-out fold {i} failed: {exc}") from exc
        out[i] = (data.F[i] - pred.mean) / math.sqrt(max(pred.variance, VARIANCE_FLOOR))
    return out
