"""Both batched kernel backends against the single-instance reference routines."""

import numpy as np
import pytest
from scipy import stats

from nsgp import _backend
from nsgp.kernels import build_factor, cross_corr, extend_factor
from nsgp.predict import (
    Dataset,
    PriorConfig,
    augment,
    latent_krige,
    linear_basis,
    log_marginal_likelihood,
    marginal_predictive,
)

PRIOR = PriorConfig()
NUG = 1e-7


@pytest.fixture(params=_backend.available())
def ops(request):
    return _backend.get(request.param)


@pytest.fixture(params=[5, 70])
def stack(request):
    rng = np.random.default_rng(42)
    t, p, n = 9, 2, request.param
    X = rng.uniform(size=(t, p))
    F = np.sin(3 * X[:, 0]) + X[:, 1] ** 2
    Z = rng.normal(size=(n, t))
    phi = np.exp(rng.normal(0.5, 0.5, size=(n, p + 1)))
    phit = np.exp(rng.normal(0.5, 0.5, size=(n, p)))
    Xq = rng.uniform(size=(7, p))
    return X, F, Z, phi, phit, Xq


def test_factorize(ops, stack):
    X, F, Z, phi, phit, _ = stack
    L, logdet, used, ok = ops.factorize(X, Z, phi, NUG)
    assert ok.all()
    for i in range(len(phi)):
        ref = build_factor(augment(X, Z[i]), phi[i], NUG)
        np.testing.assert_allclose(L[i], ref.chol, atol=1e-12)
        assert logdet[i] == pytest.approx(ref.logdet, abs=1e-10)
        assert used[i] == NUG
    L, logdet, _, ok = ops.factorize(X, None, phit, NUG)
    for i in range(len(phit)):
        np.testing.assert_allclose(L[i], build_factor(X, phit[i], NUG).chol, atol=1e-12)


def test_factorize_jitter(ops):
    X = np.array([[0.2], [0.2], [0.7]])
    L, _, used, ok = ops.factorize(X, None, np.array([[1.0], [2.0]]), 0.0)
    assert ok.all()
    assert np.all(used > 0)
    np.testing.assert_allclose(used, build_factor(X, [1.0], 0.0).nugget)


def test_loglik(ops, stack):
    X, F, Z, phi, _, _ = stack
    ll = ops.loglik(X, F, Z, phi, NUG, PRIOR.a, PRIOR.b)
    for i in range(len(phi)):
        f = build_factor(augment(X, Z[i]), phi[i], NUG)
        assert ll[i] == pytest.approx(log_marginal_likelihood(Dataset(X, F), f, PRIOR), abs=1e-9)
    ll0 = ops.loglik(X, F, None, phi[:, :2], NUG, PRIOR.a, PRIOR.b)
    f = build_factor(X, phi[0, :2], NUG)
    assert ll0[0] == pytest.approx(log_marginal_likelihood(Dataset(X, F), f, PRIOR), abs=1e-9)


def test_latent_logdens(ops, stack):
    X, _, Z, _, phit, _ = stack
    out = ops.latent_logdens(X, Z, phit, NUG)
    for i in range(len(phit)):
        cov = build_factor(X, phit[i], NUG).reconstruct()
        ref = stats.multivariate_normal(np.zeros(len(X)), cov).logpdf(Z[i])
        assert out[i] == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("exact", [True, False])
def test_predict(ops, stack, exact):
    X, F, Z, phi, _, Xq = stack
    rng = np.random.default_rng(0)
    Zq = rng.normal(size=(len(phi), len(Xq)))
    L, _, used, _ = ops.factorize(X, Z, phi, NUG)
    mean, var = ops.predict(X, F, L, Z, phi, used, Xq, Zq, PRIOR.a, PRIOR.b, exact)
    data = Dataset(X, F)
    for i in range(len(phi)):
        pts = augment(X, Z[i])
        f = build_factor(pts, phi[i], NUG)
        for j in range(len(Xq)):
            q = np.append(Xq[j], Zq[i, j])[None, :]
            ref = marginal_predictive(
                data, f, PRIOR, cross_corr(q, pts, phi[i])[0], 1 + NUG,
                linear_basis(Xq[j : j + 1])[0], "exact" if exact else "plugin",
            )
            assert mean[i, j] == pytest.approx(ref.mean, abs=1e-9)
            assert var[i, j] == pytest.approx(ref.variance, abs=1e-9)


def test_predict_stationary(ops, stack):
    X, F, _, phi, _, Xq = stack
    L, _, used, _ = ops.factorize(X, None, phi[:, :2], NUG)
    mean, var = ops.predict(X, F, L, None, phi[:, :2], used, Xq, None, PRIOR.a, PRIOR.b, True)
    f = build_factor(X, phi[0, :2], NUG)
    ref = marginal_predictive(
        Dataset(X, F), f, PRIOR, cross_corr(Xq[:1], X, phi[0, :2])[0], 1 + NUG, linear_basis(Xq[:1])[0]
    )
    assert mean[0, 0] == pytest.approx(ref.mean, abs=1e-10)
    assert var[0, 0] == pytest.approx(ref.variance, abs=1e-10)


def test_krige(ops, stack):
    X, _, Z, _, phit, Xq = stack
    L, _, used, _ = ops.factorize(X, None, phit, NUG)
    mu, var = ops.krige(X, L, Z, phit, used, Xq)
    for i in range(len(phit)):
        f = build_factor(X, phit[i], NUG)
        for j in range(len(Xq)):
            m_ref, v_ref = latent_krige(Z[i], f, cross_corr(Xq[j : j + 1], X, phit[i])[0], 1 + NUG)
            assert mu[i, j] == pytest.approx(m_ref, abs=1e-10)
            assert var[i, j] == pytest.approx(v_ref, abs=1e-10)


def test_extend(ops, stack):
    X, _, Z, phi, _, _ = stack
    L, logdet, used, _ = ops.factorize(X[:-1], Z[:, :-1], phi, NUG)
    Ln, dl, ok = ops.extend(L, X[:-1], Z[:, :-1], phi, used, X[-1], Z[:, -1])
    assert ok.all()
    for i in range(len(phi)):
        pts = augment(X, Z[i])
        f = build_factor(pts[:-1], phi[i], NUG)
        ref = extend_factor(f, cross_corr(pts[-1:], pts[:-1], phi[i])[0])
        np.testing.assert_allclose(Ln[i], ref.chol, atol=1e-12)
        assert logdet[i] + dl[i] == pytest.approx(ref.logdet, abs=1e-10)


def test_extend_duplicate_point_fails(ops):
    X = np.array([[0.0], [0.5]])
    L, _, used, _ = ops.factorize(X, None, np.array([[2.0]]), 0.0)
    _, _, ok = ops.extend(L, X, None, np.array([[2.0]]), used, np.array([0.5]), None)
    assert not ok[0]


@pytest.mark.parametrize("threads", [2, 3])
def test_thread_count_invariance(ops, stack, threads):
    X, F, Z, phi, phit, Xq = stack
    a1 = ops.loglik(X, F, Z, phi, NUG, 4.0, 2.0, threads=1)
    a2 = ops.loglik(X, F, Z, phi, NUG, 4.0, 2.0, threads=threads)
    assert a1.tobytes() == a2.tobytes()
    L, _, used, _ = ops.factorize(X, Z, phi, NUG)
    Zq = np.zeros((len(phi), len(Xq)))
    m1 = ops.predict(X, F, L, Z, phi, used, Xq, Zq, 4.0, 2.0, True, threads=1)
    m2 = ops.predict(X, F, L, Z, phi, used, Xq, Zq, 4.0, 2.0, True, threads=threads)
    assert m1[0].tobytes() == m2[0].tobytes() and m1[1].tobytes() == m2[1].tobytes()


def test_backends_agree(stack):
    names = _backend.available()
    if len(names) < 2:
        pytest.skip("compiled backend not built")
    X, F, Z, phi, _, _ = stack
    c, p = (_backend.get(n) for n in names)
    np.testing.assert_allclose(
        c.loglik(X, F, Z, phi, NUG, 4.0, 2.0), p.loglik(X, F, Z, phi, NUG, 4.0, 2.0), atol=1e-9
    )
