import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from nsgp import _backend
from nsgp.ess import ShrinkageLimitError, elliptical_slice
from nsgp.kernels import build_factor, cross_corr
from nsgp.particles import (
    ParticleDegeneracyError,
    aggregate,
    aggregate_predict,
    init_particles,
    loo_residuals,
    multinomial_indices,
    normalize_log_weights,
    particle_predict,
    propagate,
    rejuvenate,
    resample_log_weights,
    resample_weights,
    update,
)
from nsgp.predict import (
    Dataset,
    InsufficientDataError,
    PriorConfig,
    augment,
    linear_basis,
    loo_cv_residuals,
    marginal_predictive,
)


def peak_data(n=6, seed=0):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(-2, 2, n))
    return Dataset(x[:, None], np.sin(x) + 2 * np.exp(-30 * x**2))


def plane_data(t=8, p=2, seed=1):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(t, p))
    return Dataset(X, np.sin(3 * X[:, 0]) + X[:, 1:].sum(axis=1))


class ConstantLikelihood:
    """Backend wrapper whose marginal likelihood ignores the data."""

    def __init__(self, ops):
        self._ops = ops

    def __getattr__(self, name):
        return getattr(self._ops, name)

    def loglik(self, X, F, Z, phi, *args, **kw):
        return np.zeros(np.atleast_2d(phi).shape[0])


class TestInit:
    def test_shapes(self):
        ps = init_particles(peak_data(4), N=1000, seed=1)
        assert ps.Z.shape == (1000, 4)
        assert ps.phi.shape == (1000, 2) and ps.phit.shape == (1000, 1)
        assert ps.LK.shape == (1000, 4, 4) and ps.LKt.shape == (1000, 4, 4)

    def test_stationary(self):
        ps = init_particles(plane_data(), N=20, mode="stationary", seed=1)
        assert np.all(ps.Z == 0) and np.all(ps.phi[:, -1] == 0)
        f = build_factor(ps.X, ps.phi[3, :2], ps.nugget)
        np.testing.assert_allclose(ps.LK[3], f.chol, atol=1e-12)

    def test_deterministic(self):
        a = init_particles(plane_data(), N=50, seed=9)
        b = init_particles(plane_data(), N=50, seed=9)
        for name in ("Z", "phi", "phit", "LK", "LKt"):
            assert getattr(a, name).tobytes() == getattr(b, name).tobytes()

    def test_too_few_points(self):
        with pytest.raises(InsufficientDataError):
            init_particles(plane_data(t=3, p=2), N=5)

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            init_particles(plane_data(), N=5, mode="treed")

    def test_prior_moments(self):
        ps = init_particles(peak_data(5), N=4000, seed=3)
        logphi = np.log(ps.phi)
        assert abs(logphi.mean() - 0.5) < 0.03
        assert abs(logphi.var() - 0.25) < 0.03
        # latent values have unit prior variance
        assert abs(ps.Z[:, 0].var() - 1.0) < 0.08

    def test_factors_match_rebuild(self):
        ps = init_particles(plane_data(), N=10, seed=2)
        for i in range(10):
            part = ps.particle(i)
            ref = build_factor(augment(ps.X, part.Z), part.phi, ps.nugget)
            np.testing.assert_allclose(part.factorK.chol, ref.chol, atol=1e-10)
            assert part.factorK.logdet == pytest.approx(ref.logdet, abs=1e-9)
            np.testing.assert_allclose(part.factorKt.chol, build_factor(ps.X, part.phit, ps.nugget).chol, atol=1e-10)


class TestResample:
    def test_identical_particles_equal_weights(self):
        ps = init_particles(plane_data(), N=8, seed=4)
        ps.take(np.zeros(8, dtype=int))
        w = resample_weights(ps, [0.3, 0.3], 0.7)
        np.testing.assert_allclose(w, 1 / 8, atol=1e-15)

    def test_weights_sum_to_one(self):
        ps = init_particles(peak_data(6), N=500, seed=5)
        w = resample_weights(ps, [0.1], 1.7)
        assert abs(w.sum() - 1.0) <= 1e-12
        assert np.all(w >= 0)

    def test_log_and_direct_space_agree(self):
        ps = init_particles(peak_data(6), N=200, seed=6)
        logw = resample_log_weights(ps, [0.5], 0.9)
        direct = np.exp(logw) / np.exp(logw).sum()
        np.testing.assert_allclose(normalize_log_weights(logw), direct, rtol=0, atol=1e-12)

    def test_multinomial_expectation(self):
        rng = np.random.default_rng(0)
        counts = np.zeros(2)
        for _ in range(10_000):
            counts += np.bincount(multinomial_indices(np.array([0.75, 0.25]), 4, rng), minlength=2)
        counts /= 10_000
        np.testing.assert_allclose(counts, [3.0, 1.0], rtol=0.05)

    def test_degeneracy(self):
        with pytest.raises(ParticleDegeneracyError, match="particle degeneracy"):
            normalize_log_weights(np.full(4, -np.inf))

    def test_nonfinite_output(self):
        ps = init_particles(peak_data(6), N=5, seed=5)
        with pytest.raises(ValueError):
            resample_weights(ps, [0.0], np.nan)

    def test_low_ess_is_recorded(self, caplog):
        ps = init_particles(peak_data(6), N=300, seed=7)
        w = resample_weights(ps, [0.0], 50.0)
        if 1 / np.sum(w**2) < 30:
            assert ps.degeneracy_log and "effective sample size" in caplog.text

    def test_weights_match_single_particle_density(self):
        from nsgp.predict import student_t_logdensity

        data = plane_data()
        ps = init_particles(data, N=3, seed=8)
        x = np.array([0.4, 0.6])
        logw = resample_log_weights(ps, x, 0.3)
        for i in range(3):
            part = ps.particle(i)
            mu = cross_corr(x[None], ps.X, part.phit)[0]
            from nsgp.predict import latent_krige

            zq, _ = latent_krige(part.Z, part.factorKt, mu, 1 + ps.nugget)
            pts = augment(ps.X, part.Z)
            q = np.append(x, zq)[None]
            pred = marginal_predictive(
                data, part.factorK, ps.prior, cross_corr(q, pts, part.phi)[0], 1 + ps.nugget, linear_basis(x[None])[0]
            )
            assert logw[i] == pytest.approx(student_t_logdensity(pred, 0.3), abs=1e-8)


class TestPropagate:
    def test_count_and_order(self):
        ps = init_particles(peak_data(5), N=40, seed=1)
        propagate(ps, [0.05], 1.9)
        assert ps.N == 40 and ps.t == 6 and ps.Z.shape == (40, 6) and ps.LK.shape == (40, 6, 6)

    def test_stationary_latent_zero(self):
        ps = init_particles(peak_data(5), N=10, mode="stationary", seed=1)
        propagate(ps, [0.05], 1.9)
        assert np.all(ps.Z == 0)

    def test_factors_match_rebuild_up_to_30(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(size=(30, 2))
        F = np.cos(4 * X[:, 0]) * X[:, 1]
        ps = init_particles(Dataset(X[:4], F[:4]), N=6, seed=3)
        for i in range(4, 30):
            propagate(ps, X[i], F[i])
        for i in range(ps.N):
            part = ps.particle(i)
            ref = build_factor(augment(ps.X, part.Z), part.phi, ps.nugget)
            if ref.nugget == part.factorK.nugget:
                np.testing.assert_allclose(part.factorK.chol, ref.chol, atol=1e-8)
            reft = build_factor(ps.X, part.phit, ps.nugget)
            if reft.nugget == part.factorKt.nugget:
                np.testing.assert_allclose(part.factorKt.chol, reft.chol, atol=1e-8)

    def test_duplicate_input_copies_latent(self):
        data = peak_data(5)
        ps = init_particles(data, N=20, seed=4, nugget=0.0)
        propagate(ps, data.X[2], float(data.F[2]))
        np.testing.assert_allclose(ps.Z[:, -1], ps.Z[:, 2], atol=1e-4)
        assert np.all(np.isfinite(ps.LK))

    def test_new_latent_distribution(self):
        # the appended latent value is an exact conditional draw from the latent GP
        data = peak_data(5)
        ps = init_particles(data, N=1, seed=4)
        ps.take(np.zeros(4000, dtype=int))
        from nsgp.particles import query_latent

        mu, var = query_latent(ps, [[0.37]])
        propagate(ps, [0.37], 0.1)
        z = (ps.Z[:, -1] - mu[0, 0]) / math.sqrt(var[0, 0])
        assert stats.kstest(z, "norm").pvalue > 0.01


class TestRejuvenate:
    def test_prior_preserved_under_constant_likelihood(self, monkeypatch):
        monkeypatch.setattr(_backend, "ops", ConstantLikelihood(_backend.ops))
        ps = init_particles(peak_data(4), N=2000, seed=11)
        rejuvenate(ps, 5)
        assert stats.kstest(ps.Z[:, 0] / math.sqrt(1 + ps.nugget), "norm").pvalue > 0.01
        assert stats.kstest(np.log(ps.phi[:, 0]), "norm", args=(0.5, 0.5)).pvalue > 0.01

    def test_stationary_moves_only_ranges(self):
        ps = init_particles(plane_data(), N=30, mode="stationary", seed=12)
        phit = ps.phit.copy()
        before = ps.phi.copy()
        rejuvenate(ps, 2)
        assert np.all(ps.Z == 0) and np.all(ps.phi[:, -1] == 0)
        assert np.array_equal(ps.phit, phit)
        assert not np.array_equal(ps.phi[:, :2], before[:, :2])

    def test_deterministic(self):
        a = init_particles(plane_data(), N=30, seed=13)
        b = init_particles(plane_data(), N=30, seed=13)
        rejuvenate(a, 2)
        rejuvenate(b, 2)
        assert a.Z.tobytes() == b.Z.tobytes() and a.phi.tobytes() == b.phi.tobytes()

    def test_factors_rebuilt(self):
        ps = init_particles(plane_data(), N=8, seed=14)
        rejuvenate(ps, 1)
        for i in range(8):
            part = ps.particle(i)
            np.testing.assert_allclose(
                part.factorK.chol, build_factor(augment(ps.X, part.Z), part.phi, ps.nugget).chol, atol=1e-8
            )

    def test_moves_toward_data(self):
        data = peak_data(8, seed=2)
        ps = init_particles(data, N=300, seed=15)
        from nsgp import _backend as be

        before = be.ops.loglik(ps.X, ps.F, ps.Z, ps.phi, ps.nugget, 4.0, 2.0).mean()
        rejuvenate(ps, 5)
        after = be.ops.loglik(ps.X, ps.F, ps.Z, ps.phi, ps.nugget, 4.0, 2.0).mean()
        assert after > before


class TestEllipticalSlice:
    def test_gaussian_posterior(self):
        # prior N(0, 1), likelihood N(y | x, 1) -> posterior N(y/2, 1/2)
        rng = np.random.default_rng(0)
        y = 1.4
        x = rng.normal(size=(3000, 1))

        def ll(v, rows):
            return -0.5 * (y - v[:, 0]) ** 2

        cur = ll(x, None)
        for _ in range(30):
            x, cur = elliptical_slice(x, rng.normal(size=x.shape), ll, cur, rng)
        assert stats.kstest(x[:, 0], "norm", args=(y / 2, math.sqrt(0.5))).pvalue > 0.01

    def test_shrink_guard(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ShrinkageLimitError):
            elliptical_slice(
                np.ones((2, 1)), np.ones((2, 1)), lambda v, r: np.full(len(r), -np.inf), np.zeros(2), rng, max_shrink=50
            )


class TestAggregate:
    def test_hand_triple(self):
        m = np.array([[0.0], [1.0], [2.0]])
        s = np.ones((3, 1))
        mean, sd = aggregate(m, s, "sd-plus-var")
        assert mean[0] == pytest.approx(1.0, abs=1e-12)
        assert sd[0] == pytest.approx(2.0, abs=1e-12)
        _, sd2 = aggregate(m, s, "total-variance")
        assert sd2[0] == pytest.approx(math.sqrt(2.0), abs=1e-12)

    def test_single_particle(self):
        mean, sd = aggregate([[0.3, 0.1]], [[0.2, 0.5]])
        np.testing.assert_array_equal(mean, [0.3, 0.1])
        np.testing.assert_array_equal(sd, [0.2, 0.5])

    def test_identical_particles(self):
        mean, sd = aggregate(np.full((5, 2), 0.7), np.full((5, 2), 0.4))
        np.testing.assert_allclose(sd, 0.4, atol=1e-15)

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            aggregate([[0.0]], [[1.0]], "median")

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 30), st.integers(0, 2**32 - 1))
    def test_permutation_invariant(self, n, seed):
        rng = np.random.default_rng(seed)
        m, s = rng.normal(size=(n, 3)), rng.uniform(size=(n, 3))
        perm = rng.permutation(n)
        for mode in ("sd-plus-var", "total-variance"):
            a, b = aggregate(m, s, mode), aggregate(m[perm], s[perm], mode)
            np.testing.assert_allclose(a[0], b[0], atol=1e-12)
            np.testing.assert_allclose(a[1], b[1], atol=1e-12)

    def test_empty_queries(self):
        ps = init_particles(peak_data(5), N=4, seed=0)
        assert len(aggregate_predict(ps, np.empty((0, 1)))) == 0

    def test_stationary_matches_direct_gp(self):
        data = plane_data()
        ps = init_particles(data, N=5, mode="stationary", seed=21)
        Xq = np.random.default_rng(0).uniform(size=(4, 2))
        means, var = particle_predict(ps, Xq)
        for i in range(5):
            f = build_factor(data.X, ps.phi[i, :2], ps.nugget)
            for j in range(4):
                ref = marginal_predictive(
                    data, f, ps.prior, cross_corr(Xq[j : j + 1], data.X, ps.phi[i, :2])[0],
                    1 + ps.nugget, linear_basis(Xq[j : j + 1])[0],
                )
                assert means[i, j] == pytest.approx(ref.mean, abs=1e-10)
                assert var[i, j] == pytest.approx(ref.variance, abs=1e-10)


class TestSequentialUpdate:
    def test_count_constant_and_thread_invariant(self):
        data = peak_data(5)
        runs = []
        for threads in (1, 2):
            ps = init_particles(data, N=100, seed=30, threads=threads)
            for x in (-0.3, 0.0, 0.8):
                update(ps, [x], math.sin(x) + 2 * math.exp(-30 * x * x))
                assert ps.N == 100
            runs.append(ps)
        for name in ("Z", "phi", "phit", "LK"):
            assert getattr(runs[0], name).tobytes() == getattr(runs[1], name).tobytes()


class TestLOO:
    def test_matches_single_instance(self):
        data = plane_data(t=9)
        ps = init_particles(data, N=3, seed=40)
        ref = np.mean(
            [loo_cv_residuals(data, ps.phi[i], ps.Z[i], ps.prior, ps.nugget) for i in range(3)], axis=0
        )
        np.testing.assert_allclose(loo_residuals(ps), ref, atol=1e-7)

    def test_too_few(self):
        ps = init_particles(plane_data(t=4), N=3, seed=0)
        with pytest.raises(InsufficientDataError):
            loo_residuals(ps)
