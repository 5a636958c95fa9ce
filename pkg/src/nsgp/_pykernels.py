"""Pure-NumPy batched kernels; same interface as the compiled ``_ckernels``.

Work is vectorized across the particle stack with stacked ``np.linalg``
calls.  The stack is always cut into fixed-size chunks; ``threads > 1`` only
spreads those chunks over a thread pool, so the floating-point work (and
hence every result bit) is independent of the thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.special import gammaln

from .kernels import jitter_schedule

CHUNK_QUERIES = 512
CHUNK_PARTICLES = 32


def _parallel(fn, n: int, threads: int):
    """Run fn(slice) over fixed chunks of the particle axis and concatenate the results."""
    parts = [slice(s, min(n, s + CHUNK_PARTICLES)) for s in range(0, n, CHUNK_PARTICLES)]
    if len(parts) == 1:
        return fn(parts[0])
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(fn, parts))
    else:
        results = [fn(sl) for sl in parts]
    if isinstance(results[0], tuple):
        return tuple(np.concatenate(r) for r in zip(*results))
    return np.concatenate(results)


def _sqdist(X, Z, phi):
    """Weighted squared distances (n, t, t) between design rows, per particle."""
    p = X.shape[1]
    diff2 = (X[:, None, :] - X[None, :, :]) ** 2  # (t, t, p)
    d2 = np.einsum("ijl,nl->nij", diff2, phi[:, :p])
    if Z is not None:
        d2 += phi[:, p, None, None] * (Z[:, :, None] - Z[:, None, :]) ** 2
    return d2


def _cross_sqdist(Xq, X, Zq, Z, phi):
    """Weighted squared distances (n, m, t) between queries and design rows."""
    p = X.shape[1]
    diff2 = (Xq[:, None, :] - X[None, :, :]) ** 2  # (m, t, p)
    d2 = np.einsum("mtl,nl->nmt", diff2, phi[:, :p])
    if Z is not None:
        d2 += phi[:, p, None, None] * (Zq[:, :, None] - Z[:, None, :]) ** 2
    return d2


def _factor_stack(K0, nugget):
    """Cholesky of K0 + nugget I for each stacked matrix with per-matrix jitter escalation."""
    n, t, _ = K0.shape
    L = np.zeros_like(K0)
    used = np.zeros(n)
    ok = np.zeros(n, dtype=bool)
    eye = np.eye(t)
    try:
        L[:] = np.linalg.cholesky(K0 + nugget * eye)
        used[:] = nugget
        ok[:] = True
        return L, used, ok
    except np.linalg.LinAlgError:
        pass
    for i in range(n):
        for jit in jitter_schedule(nugget):
            try:
                L[i] = np.linalg.cholesky(K0[i] + jit * eye)
            except np.linalg.LinAlgError:
                continue
            used[i] = jit
            ok[i] = True
            break
    return L, used, ok


def _logdet(L):
    return 2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)


def _basis(X):
    return np.hstack([np.ones((X.shape[0], 1)), X])


def _gls(L, X, F):
    """Batched GLS: returns A = L^-1 H, resid = L^-1 (F - H beta), R = chol(A'A), Phi."""
    n, t, _ = L.shape
    HF = np.hstack([_basis(X), F[:, None]])
    B = np.linalg.solve(L, np.broadcast_to(HF, (n,) + HF.shape))
    q = HF.shape[1] - 1
    A, c = B[:, :, :q], B[:, :, q]
    G = np.einsum("nti,ntj->nij", A, A)
    R = np.linalg.cholesky(G)
    rhs = np.einsum("nti,nt->ni", A, c)
    beta = np.linalg.solve(G, rhs[:, :, None])[:, :, 0]
    resid = c - np.einsum("ntq,nq->nt", A, beta)
    Phi = np.einsum("nt,nt->n", resid, resid)
    return A, resid, R, beta, Phi


def factorize(X, Z, phi, nugget, threads=1):
    X = np.ascontiguousarray(X, dtype=float)
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    Z = None if Z is None else np.atleast_2d(np.asarray(Z, dtype=float))

    def run(sl):
        K0 = np.exp(-_sqdist(X, None if Z is None else Z[sl], phi[sl]))
        L, used, ok = _factor_stack(K0, nugget)
        logdet = np.zeros(L.shape[0])
        logdet[ok] = _logdet(L[ok])
        return L, logdet, used, ok

    return _parallel(run, phi.shape[0], threads)


def loglik(X, F, Z, phi, nugget, a, b, threads=1):
    X = np.ascontiguousarray(X, dtype=float)
    F = np.asarray(F, dtype=float)
    t, p = X.shape
    nu = t - p - 1
    const = (
        -0.5 * nu * math.log(2 * math.pi)
        + 0.5 * a * math.log(b / 2)
        - gammaln(a / 2)
        + gammaln((a + nu) / 2)
    )
    L, logdet, _, ok = factorize(X, Z, phi, nugget, threads)
    out = np.full(L.shape[0], -np.inf)
    if ok.any():
        _, _, R, _, Phi = _gls(L[ok], X, F)
        out[ok] = const - 0.5 * logdet[ok] - 0.5 * _logdet(R) - 0.5 * (a + nu) * np.log((b + Phi) / 2)
    return out


def latent_logdens(X, Z, phit, nugget, threads=1):
    X = np.ascontiguousarray(X, dtype=float)
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    L, logdet, _, ok = factorize(X, None, phit, nugget, threads)
    out = np.full(L.shape[0], -np.inf)
    if ok.any():
        v = np.linalg.solve(L[ok], Z[ok][:, :, None])[:, :, 0]
        t = X.shape[0]
        out[ok] = -0.5 * np.sum(v * v, axis=1) - 0.5 * logdet[ok] - 0.5 * t * math.log(2 * math.pi)
    return out


def predict(X, F, L, Z, phi, nug, Xq, Zq, a, b, exact=True, threads=1):
    X = np.ascontiguousarray(X, dtype=float)
    F = np.asarray(F, dtype=float)
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    nug = np.asarray(nug, dtype=float)
    t, p = X.shape
    nu = t - p - 1
    m = Xq.shape[0]
    Hq = _basis(Xq)

    def run(sl):
        Ls = L[sl]
        A, resid, R, beta, Phi = _gls(Ls, X, F)
        scale = (b + Phi) / (a + nu)
        k = Ls.shape[0]
        mean = np.empty((k, m))
        var = np.empty((k, m))
        for j0 in range(0, m, CHUNK_QUERIES):
            js = slice(j0, min(m, j0 + CHUNK_QUERIES))
            d2 = _cross_sqdist(Xq[js], X, None if Z is None else Zq[sl, js], None if Z is None else Z[sl], phi[sl])
            W = np.linalg.solve(Ls, np.exp(-d2).transpose(0, 2, 1))  # (k, t, mj)
            mean[:, js] = beta @ Hq[js].T + np.einsum("ntm,nt->nm", W, resid)
            s = (1.0 + nug[sl])[:, None] - np.einsum("ntm,ntm->nm", W, W)
            if exact:
                U = Hq[js].T[None, :, :] - np.einsum("ntq,ntm->nqm", A, W)
                V = np.linalg.solve(R, U)
                s = s + np.einsum("nqm,nqm->nm", V, V)
            var[:, js] = np.where(s > 0, scale[:, None] * s, 0.0)
        return mean, var

    return _parallel(run, phi.shape[0], threads)


def krige(X, L, Z, phit, nug, Xq, threads=1):
    X = np.ascontiguousarray(X, dtype=float)
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    phit = np.atleast_2d(np.asarray(phit, dtype=float))
    nug = np.asarray(nug, dtype=float)

    def run(sl):
        Ls = L[sl]
        zw = np.linalg.solve(Ls, Z[sl][:, :, None])[:, :, 0]
        d2 = _cross_sqdist(Xq, X, None, None, phit[sl])
        W = np.linalg.solve(Ls, np.exp(-d2).transpose(0, 2, 1))
        mu = np.einsum("ntm,nt->nm", W, zw)
        var = (1.0 + nug[sl])[:, None] - np.einsum("ntm,ntm->nm", W, W)
        return mu, np.maximum(var, 0.0)

    return _parallel(run, phit.shape[0], threads)


def extend(L, X, Z, phi, nug, x_new, z_new, threads=1):
    X = np.ascontiguousarray(X, dtype=float)
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    x_new = np.asarray(x_new, dtype=float).reshape(1, -1)
    nug = np.asarray(nug, dtype=float)
    t = X.shape[0]

    def run(sl):
        Ls = L[sl]
        k = Ls.shape[0]
        zq = None if Z is None else np.asarray(z_new, dtype=float)[sl][:, None]
        d2 = _cross_sqdist(x_new, X, zq, None if Z is None else Z[sl], phi[sl])[:, 0, :]
        w = np.linalg.solve(Ls, np.exp(-d2)[:, :, None])[:, :, 0]
        d2n = 1.0 + nug[sl] - np.sum(w * w, axis=1)
        ok = np.isfinite(d2n) & (d2n > 0)
        out = np.zeros((k, t + 1, t + 1))
        out[:, :t, :t] = Ls
        out[:, t, :t] = w
        out[ok, t, t] = np.sqrt(d2n[ok])
        dl = np.zeros(k)
        dl[ok] = np.log(d2n[ok])
        return out, dl, ok

    return _parallel(run, phi.shape[0], threads)
