"""Particle learning for the latent-input-augmented GP emulator.

Each particle carries a latent coordinate ``Z`` for every design point, the
ranges ``phi`` of the f-process over the augmented inputs ``[x, Z]``, the
ranges ``phit`` of the latent process, and Cholesky factors of both
correlation matrices.  The regression coefficients and the scale are
integrated out, so they never appear in the state.

The whole population is stored as stacked arrays (particle axis first) so
that the batched kernels in :mod:`nsgp._backend` can process all particles in
one call.  :meth:`ParticleSet.particle` exposes a single particle as a
:class:`Particle` with :class:`~nsgp.kernels.CorrFactor` objects.

In stationary mode every ``Z`` is zero, the last entry of ``phi`` is zero, and
the latent process is not used at all; the model reduces to an ordinary GP
with a linear mean.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _backend
from .ess import elliptical_slice
from .kernels import DEFAULT_NUGGET, CorrFactor, FactorizationError
from .predict import (
    PREDICTIVE_FORMS,
    Dataset,
    InsufficientDataError,
    PriorConfig,
    predictive_dof,
    student_t_logpdf,
)

logger = logging.getLogger(__name__)

MODES = ("nonstationary", "stationary")
AGGREGATIONS = ("sd-plus-var", "total-variance")
STREAMS = ("init", "resample", "propagate", "rejuvenate", "design", "eval")
DEGENERACY_FRACTION = 0.1


class ParticleDegeneracyError(RuntimeError):
    pass


def make_streams(seed: int) -> dict:
    """Independent named generators derived from one integer seed."""
    return {
        name: np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))
        for k, name in enumerate(STREAMS)
    }


@dataclass(frozen=True)
class Particle:
    Z: np.ndarray
    phi: np.ndarray
    phit: np.ndarray
    factorK: CorrFactor
    factorKt: CorrFactor | None


@dataclass(frozen=True)
class AggregatedPrediction:
    """Particle-averaged predictions at m query points.

    ``mean`` and ``sd`` have shape (m,); ``particle_means`` and
    ``particle_sds`` have shape (N, m).
    """

    mean: np.ndarray
    sd: np.ndarray
    particle_means: np.ndarray
    particle_sds: np.ndarray

    def __len__(self):
        return self.mean.size


@dataclass
class ParticleSet:
    X: np.ndarray
    F: np.ndarray
    prior: PriorConfig
    mode: str
    Z: np.ndarray  # (N, t)
    phi: np.ndarray  # (N, p+1)
    phit: np.ndarray  # (N, p)
    LK: np.ndarray  # (N, t, t)
    nugK: np.ndarray  # (N,)
    LKt: np.ndarray | None = None
    nugKt: np.ndarray | None = None
    nugget: float = DEFAULT_NUGGET
    form: str = "exact"
    threads: int = 1
    streams: dict = field(default_factory=lambda: make_streams(0), repr=False)
    degeneracy_log: list = field(default_factory=list)

    @property
    def N(self) -> int:
        return self.Z.shape[0]

    @property
    def t(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def stationary(self) -> bool:
        return self.mode == "stationary"

    @property
    def data(self) -> Dataset:
        return Dataset(self.X, self.F)

    @property
    def kernel_phi(self) -> np.ndarray:
        return self.phi[:, : self.p] if self.stationary else self.phi

    @property
    def kernel_Z(self):
        return None if self.stationary else self.Z

    def particle(self, i: int) -> Particle:
        def fac(L, nug):
            return CorrFactor(L.copy(), float(nug), float(2.0 * np.sum(np.log(np.diag(L)))))

        kt = None if self.stationary else fac(self.LKt[i], self.nugKt[i])
        return Particle(self.Z[i].copy(), self.phi[i].copy(), self.phit[i].copy(), fac(self.LK[i], self.nugK[i]), kt)

    def take(self, idx) -> None:
        """Replace the population by the particles at ``idx`` (in that order)."""
        idx = np.asarray(idx)
        for name in ("Z", "phi", "phit", "LK", "nugK", "LKt", "nugKt"):
            arr = getattr(self, name)
            if arr is not None:
                setattr(self, name, arr[idx].copy())

    def copy(self) -> "ParticleSet":
        arrays = {
            name: (None if getattr(self, name) is None else getattr(self, name).copy())
            for name in ("X", "F", "Z", "phi", "phit", "LK", "nugK", "LKt", "nugKt")
        }
        return replace(self, degeneracy_log=list(self.degeneracy_log), **arrays)

    def refactor(self) -> None:
        """Rebuild both factors from the current state."""
        ops = _backend.ops
        if not self.stationary:
            self.LKt, _, self.nugKt, ok = ops.factorize(self.X, None, self.phit, self.nugget, self.threads)
            _require_ok(ok, "latent correlation")
        self.LK, _, self.nugK, ok = ops.factorize(self.X, self.kernel_Z, self.kernel_phi, self.nugget, self.threads)
        _require_ok(ok, "correlation")


def _require_ok(ok, what):
    if not np.all(ok):
        bad = int(np.argmin(ok))
        raise FactorizationError(f"{what} matrix of particle {bad} is not positive definite even with maximal jitter")


def _check_mode(mode):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def init_particles(
    data: Dataset,
    prior: PriorConfig = PriorConfig(),
    N: int = 1000,
    mode: str = "nonstationary",
    seed: int = 0,
    nugget: float = DEFAULT_NUGGET,
    form: str = "exact",
    threads: int = 1,
    streams: dict | None = None,
) -> ParticleSet:
    """Draw N particles from the prior given an initial design of size t0 >= p+2.

    Ranges are log-normal; latent values are drawn from the latent GP prior
    N(0, Kt + nugget I).  In stationary mode ``Z`` is zero and ``phi[:, p]``
    is zero.
    """
    _check_mode(mode)
    if form not in PREDICTIVE_FORMS:
        raise ValueError(f"form must be one of {PREDICTIVE_FORMS}, got {form!r}")
    if N < 1:
        raise ValueError("need at least one particle")
    t, p = data.size, data.dim
    if t <= p + 1:
        raise InsufficientDataError(f"initial design needs t0 >= p+2 = {p + 2} points, got {t}")
    streams = make_streams(seed) if streams is None else streams
    rng = streams["init"]
    phi = np.exp(rng.normal(prior.mu_phi, math.sqrt(prior.nu_phi), size=(N, p + 1)))
    phit = np.exp(rng.normal(prior.m_phit, math.sqrt(prior.v_phit), size=(N, p)))
    eps = rng.normal(size=(N, t))
    ps = ParticleSet(
        X=data.X.copy(), F=data.F.copy(), prior=prior, mode=mode,
        Z=np.zeros((N, t)), phi=phi, phit=phit,
        LK=np.empty((N, t, t)), nugK=np.empty(N),
        nugget=nugget, form=form, threads=threads, streams=streams,
    )
    if ps.stationary:
        ps.phi[:, p] = 0.0
    else:
        ps.LKt, _, ps.nugKt, ok = _backend.ops.factorize(ps.X, None, phit, nugget, threads)
        _require_ok(ok, "latent correlation")
        ps.Z = np.einsum("nij,nj->ni", ps.LKt, eps)
    ps.LK, _, ps.nugK, ok = _backend.ops.factorize(ps.X, ps.kernel_Z, ps.kernel_phi, nugget, threads)
    _require_ok(ok, "correlation")
    return ps


def query_latent(ps: ParticleSet, Xq) -> tuple[np.ndarray, np.ndarray]:
    """Latent kriging mean and variance (each (N, m)) at query inputs."""
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    if ps.stationary:
        z = np.zeros((ps.N, Xq.shape[0]))
        return z, z.copy()
    return _backend.ops.krige(ps.X, ps.LKt, ps.Z, ps.phit, ps.nugKt, Xq, ps.threads)


def particle_predict(ps: ParticleSet, Xq) -> tuple[np.ndarray, np.ndarray]:
    """Per-particle predictive locations and squared scales, shape (N, m).

    The latent coordinate of each query is the particle's latent kriging mean.
    """
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    if Xq.shape[1] != ps.p:
        raise ValueError(f"queries have dimension {Xq.shape[1]}, design has {ps.p}")
    Zq = None if ps.stationary else query_latent(ps, Xq)[0]
    return _backend.ops.predict(
        ps.X, ps.F, ps.LK, ps.kernel_Z, ps.kernel_phi, ps.nugK, Xq, Zq,
        ps.prior.a, ps.prior.b, ps.form == "exact", ps.threads,
    )


def resample_log_weights(ps: ParticleSet, x, y: float) -> np.ndarray:
    """Unnormalized log weights: the t log-density of y at x under each particle."""
    if not math.isfinite(y):
        raise ValueError(f"output must be finite, got {y}")
    mean, var = particle_predict(ps, np.asarray(x, dtype=float).reshape(1, -1))
    dof = predictive_dof(ps.t, ps.p, ps.prior, ps.form)
    return student_t_logpdf(y, mean[:, 0], var[:, 0], dof)


def normalize_log_weights(logw) -> np.ndarray:
    logw = np.asarray(logw, dtype=float)
    finite = np.isfinite(logw)
    if not finite.any():
        raise ParticleDegeneracyError("particle degeneracy: no particle has a finite weight")
    w = np.zeros_like(logw)
    top = logw[finite].max()
    w[finite] = np.exp(logw[finite] - top)
    return w / w.sum()


def effective_sample_size(w) -> float:
    w = np.asarray(w, dtype=float)
    return float(1.0 / np.sum(w * w))


def resample_weights(ps: ParticleSet, x, y: float) -> np.ndarray:
    w = normalize_log_weights(resample_log_weights(ps, x, y))
    ess = effective_sample_size(w)
    if ess < DEGENERACY_FRACTION * ps.N:
        record = {"t": ps.t, "ess": ess, "N": ps.N}
        ps.degeneracy_log.append(record)
        logger.warning("effective sample size %.1f below %.0f%% of N=%d at t=%d", ess, 100 * DEGENERACY_FRACTION, ps.N, ps.t)
    return w


def multinomial_indices(w, N: int, rng: np.random.Generator) -> np.ndarray:
    counts = rng.multinomial(N, w)
    return np.repeat(np.arange(len(w)), counts)


def resample_indices(ps: ParticleSet, x, y: float, rng: np.random.Generator | None = None) -> np.ndarray:
    rng = ps.streams["resample"] if rng is None else rng
    return multinomial_indices(resample_weights(ps, x, y), ps.N, rng)


def _extend_or_rebuild(L, nug, X, Z, phi, x_new, z_new, X_full, Z_full, nugget, threads):
    ops = _backend.ops
    Ln, _, ok = ops.extend(L, X, Z, phi, nug, x_new, z_new, threads)
    nug = nug.copy()
    if not ok.all():
        bad = np.flatnonzero(~ok)
        logger.info("rebuilding %d factor(s) after a failed extension", bad.size)
        Lb, _, used, okb = ops.factorize(X_full, None if Z_full is None else Z_full[bad], phi[bad], nugget, threads)
        _require_ok(okb, "extended correlation")
        Ln[bad] = Lb
        nug[bad] = used
    return Ln, nug


def propagate(ps: ParticleSet, x, y: float, rng: np.random.Generator | None = None) -> ParticleSet:
    """Append (x, y) to every particle: extend Kt, draw the new latent, extend K."""
    rng = ps.streams["propagate"] if rng is None else rng
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != ps.p:
        raise ValueError(f"new input has dimension {x.size}, design has {ps.p}")
    if not math.isfinite(y):
        raise ValueError(f"output must be finite, got {y}")
    X_full = np.vstack([ps.X, x])
    eps = rng.normal(size=ps.N)
    if ps.stationary:
        z_new = np.zeros(ps.N)
    else:
        mu, var = _backend.ops.krige(ps.X, ps.LKt, ps.Z, ps.phit, ps.nugKt, x[None, :], ps.threads)
        z_new = mu[:, 0] + np.sqrt(var[:, 0]) * eps
        ps.LKt, ps.nugKt = _extend_or_rebuild(
            ps.LKt, ps.nugKt, ps.X, None, ps.phit, x, None, X_full, None, ps.nugget, ps.threads
        )
    Z_full = np.hstack([ps.Z, z_new[:, None]])
    ps.LK, ps.nugK = _extend_or_rebuild(
        ps.LK, ps.nugK, ps.X, ps.kernel_Z, ps.kernel_phi, x, None if ps.stationary else z_new,
        X_full, None if ps.stationary else Z_full, ps.nugget, ps.threads,
    )
    ps.X, ps.F, ps.Z = X_full, np.append(ps.F, y), Z_full
    return ps


def _theta_layout(ps: ParticleSet):
    """Prior mean and sd of the moved log-range vector, and the current value."""
    pr, p = ps.prior, ps.p
    if ps.stationary:
        mean = np.full(p, pr.mu_phi)
        sd = np.full(p, math.sqrt(pr.nu_phi))
        cur = np.log(ps.phi[:, :p])
    else:
        mean = np.r_[np.full(p + 1, pr.mu_phi), np.full(p, pr.m_phit)]
        sd = np.r_[np.full(p + 1, math.sqrt(pr.nu_phi)), np.full(p, math.sqrt(pr.v_phit))]
        cur = np.hstack([np.log(ps.phi), np.log(ps.phit)])
    return mean, sd, cur


def rejuvenate(ps: ParticleSet, n_moves: int = 1, rng: np.random.Generator | None = None) -> ParticleSet:
    """MCMC sweeps by elliptical slice sampling.

    Each sweep moves ``Z`` under its latent-GP prior with the marginal
    likelihood of F, then the log ranges (and log latent ranges) under their
    Gaussian priors with the likelihood times the latent density of ``Z``.
    Stationary mode only moves the p log ranges of the f-process.
    """
    rng = ps.streams["rejuvenate"] if rng is None else rng
    ops = _backend.ops
    X, F, a, b, nugget, th = ps.X, ps.F, ps.prior.a, ps.prior.b, ps.nugget, ps.threads
    p = ps.p
    mean, sd, _ = _theta_layout(ps)
    for _ in range(n_moves):
        if not ps.stationary:
            phi = ps.phi

            def z_loglik(Zp, rows):
                return ops.loglik(X, F, Zp, phi[rows], nugget, a, b, th)

            nu = np.einsum("nij,nj->ni", ps.LKt, rng.normal(size=ps.Z.shape))
            cur = ops.loglik(X, F, ps.Z, phi, nugget, a, b, th)
            ps.Z, _ = elliptical_slice(ps.Z, nu, z_loglik, cur, rng)

        _, _, theta = _theta_layout(ps)
        Z = ps.Z

        if ps.stationary:
            def th_loglik(T, rows):
                return ops.loglik(X, F, None, np.exp(T + mean), nugget, a, b, th)
        else:
            def th_loglik(T, rows):
                E = np.exp(T + mean)
                return ops.loglik(X, F, Z[rows], E[:, : p + 1], nugget, a, b, th) + ops.latent_logdens(
                    X, Z[rows], E[:, p + 1 :], nugget, th
                )

        x0 = theta - mean
        cur = th_loglik(x0, np.arange(ps.N))
        nu = rng.normal(size=x0.shape) * sd
        x1, _ = elliptical_slice(x0, nu, th_loglik, cur, rng)
        E = np.exp(x1 + mean)
        if ps.stationary:
            ps.phi[:, :p] = E
        else:
            ps.phi = E[:, : p + 1].copy()
            ps.phit = E[:, p + 1 :].copy()
        if not ps.stationary:
            # the next Z-move needs the latent factor for the new phit
            ps.LKt, _, ps.nugKt, ok = ops.factorize(X, None, ps.phit, nugget, th)
            _require_ok(ok, "latent correlation")
    ps.refactor()
    return ps


def update(ps: ParticleSet, x, y: float, n_moves: int = 1) -> ParticleSet:
    """Resample on (x, y), propagate it into every particle, then rejuvenate."""
    ps.take(resample_indices(ps, x, y))
    propagate(ps, x, y)
    if n_moves > 0:
        rejuvenate(ps, n_moves)
    return ps


def aggregate(particle_means, particle_sds, mode: str = "sd-plus-var") -> tuple[np.ndarray, np.ndarray]:
    """Combine per-particle predictions (arrays of shape (N, m)).

    The mean is the average of the particle means.  Mode ``"sd-plus-var"`` returns
    mean(sd) + var(means); mode ``"total-variance"`` returns
    sqrt(mean(sd^2) + var(means)).  The variance of the means uses the
    unbiased (N-1) divisor and is zero for a single particle.
    """
    if mode not in AGGREGATIONS:
        raise ValueError(f"aggregation must be one of {AGGREGATIONS}, got {mode!r}")
    M = np.atleast_2d(np.asarray(particle_means, dtype=float))
    S = np.atleast_2d(np.asarray(particle_sds, dtype=float))
    n = M.shape[0]
    mean = M.mean(axis=0)
    spread = M.var(axis=0, ddof=1) if n > 1 else np.zeros(M.shape[1])
    if mode == "sd-plus-var":
        sd = S.mean(axis=0) + spread
    else:
        sd = np.sqrt((S * S).mean(axis=0) + spread)
    return mean, sd


def aggregate_predict(ps: ParticleSet, Xq, mode: str = "sd-plus-var") -> AggregatedPrediction:
    Xq = np.asarray(Xq, dtype=float)
    if Xq.size == 0:
        e = np.empty(0)
        return AggregatedPrediction(e, e.copy(), np.empty((ps.N, 0)), np.empty((ps.N, 0)))
    means, var = particle_predict(ps, Xq.reshape(-1, ps.p))
    sds = np.sqrt(var)
    mean, sd = aggregate(means, sds, mode)
    return AggregatedPrediction(mean, sd, means, sds)


def loo_residuals(ps: ParticleSet) -> np.ndarray:
    """Leave-one-out standardized residuals at each design point, averaged over particles.

    Each fold refits every particle without point i (hyperparameters and
    latent values held fixed) and predicts at x_i with its own latent value.
    """
    t, p = ps.t, ps.p
    if t < p + 3:
        raise InsufficientDataError(f"leave-one-out needs t >= p+3 = {p + 3}, got t={t}")
    ops = _backend.ops
    out = np.empty(t)
    for i in range(t):
        keep = np.arange(t) != i
        Xk, Fk = ps.X[keep], ps.F[keep]
        Zk = None if ps.stationary else ps.Z[:, keep]
        L, _, used, ok = ops.factorize(Xk, Zk, ps.kernel_phi, ps.nugget, ps.threads)
        if not ok.all():
            raise ValueError(f"leave-one-out fold {i} failed: correlation matrix not factorizable")
        Zq = None if ps.stationary else ps.Z[:, i : i + 1]
        mean, var = ops.predict(
            Xk, Fk, L, Zk, ps.kernel_phi, used, ps.X[i : i + 1], Zq,
            ps.prior.a, ps.prior.b, ps.form == "exact", ps.threads,
        )
        r = (ps.F[i] - mean[:, 0]) / np.sqrt(np.maximum(var[:, 0], 1e-12))
        out[i] = r.mean()
    return out
