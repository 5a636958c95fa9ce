# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled batched kernels; same interface as :mod:`nsgp._pykernels`.

Every function works on a stack of ``n`` particles that share the design
``X`` (t, p) and outputs ``F`` (t,).  Particles are processed independently
(OpenMP over particles), so results do not depend on the thread count.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport exp, log, sqrt, lgamma, isfinite, INFINITY, M_PI
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef double JITTER_FLOOR = 1e-10
cdef double JITTER_CAP = 1e-3


cdef void build_corr(const double* X, const double* Z, const double* phi,
                     int t, int p, int use_z, double diag, double* K) noexcept nogil:
    cdef int i, j, l
    cdef double s, d
    for i in range(t):
        K[i * t + i] = 1.0 + diag
        for j in range(i):
            s = 0.0
            for l in range(p):
                d = X[i * p + l] - X[j * p + l]
                s = s + phi[l] * d * d
            if use_z:
                d = Z[i] - Z[j]
                s = s + phi[p] * d * d
            s = exp(-s)
            K[i * t + j] = s
            K[j * t + i] = 0.0


cdef int chol_inplace(double* A, int n) noexcept nogil:
    """Lower Cholesky of the lower triangle of A (row-major), in place."""
    cdef int i, j, k
    cdef double s, d
    for j in range(n):
        s = A[j * n + j]
        for k in range(j):
            s = s - A[j * n + k] * A[j * n + k]
        if not (s > 0.0) or not isfinite(s):
            return -1
        d = sqrt(s)
        A[j * n + j] = d
        for i in range(j + 1, n):
            s = A[i * n + j]
            for k in range(j):
                s = s - A[i * n + k] * A[j * n + k]
            A[i * n + j] = s / d
    return 0


cdef void fwd(const double* L, int n, double* x) noexcept nogil:
    """Solve L y = x in place (L lower, row-major)."""
    cdef int i, k
    cdef double s
    for i in range(n):
        s = x[i]
        for k in range(i):
            s = s - L[i * n + k] * x[k]
        x[i] = s / L[i * n + i]


cdef double logdet_chol(const double* L, int n) noexcept nogil:
    cdef int i
    cdef double s = 0.0
    for i in range(n):
        s = s + log(L[i * n + i])
    return 2.0 * s


cdef int factor_one(const double* X, const double* Z, const double* phi, int t, int p,
                    int use_z, double nugget, double* L, double* used) noexcept nogil:
    cdef double jit = nugget
    while True:
        build_corr(X, Z, phi, t, p, use_z, jit, L)
        if chol_inplace(L, t) == 0:
            used[0] = jit
            return 0
        if jit > 0.0:
            jit = jit * 10.0
            if jit < JITTER_FLOOR:
                jit = JITTER_FLOOR
        else:
            jit = JITTER_FLOOR
        if jit > JITTER_CAP * (1.0 + 1e-9):
            return -1


cdef int gls_one(const double* L, const double* X, const double* F, int t, int p,
                 double* A, double* c, double* R, double* beta, double* resid,
                 double* Phi, double* psi_logdet) noexcept nogil:
    """Generalized least squares through the factor L of K.

    A (q, t) holds L^{-1} h_j for each basis column j; R (q, q) the Cholesky
    factor of A A^T; resid = L^{-1}(F - H beta).
    """
    cdef int q = p + 1
    cdef int i, j, k
    cdef double s
    for j in range(q):
        for i in range(t):
            A[j * t + i] = 1.0 if j == 0 else X[i * p + j - 1]
        fwd(L, t, &A[j * t])
    for i in range(t):
        c[i] = F[i]
    fwd(L, t, c)
    for j in range(q):
        for k in range(j + 1):
            s = 0.0
            for i in range(t):
                s = s + A[j * t + i] * A[k * t + i]
            R[j * q + k] = s
        s = 0.0
        for i in range(t):
            s = s + A[j * t + i] * c[i]
        beta[j] = s
    if chol_inplace(R, q) != 0:
        return -1
    psi_logdet[0] = logdet_chol(R, q)
    # beta = (R R^T)^{-1} A c
    fwd(R, q, beta)
    for j in range(q - 1, -1, -1):
        s = beta[j]
        for k in range(j + 1, q):
            s = s - R[k * q + j] * beta[k]
        beta[j] = s / R[j * q + j]
    s = 0.0
    for i in range(t):
        resid[i] = c[i]
        for j in range(q):
            resid[i] = resid[i] - A[j * t + i] * beta[j]
        s = s + resid[i] * resid[i]
    Phi[0] = s
    return 0


def factorize(double[:, ::1] X, Z, phi, double nugget, int threads=1):
    """Factor K + nugget I for each particle; jitter escalates on failure.

    Returns (L, logdet, nugget_used, ok).
    """
    cdef int use_z = Z is not None
    cdef double[:, ::1] phiv = np.ascontiguousarray(phi, dtype=np.float64)
    cdef int n = phiv.shape[0]
    cdef int t = X.shape[0]
    cdef int p = X.shape[1]
    cdef double[:, ::1] Zv = np.ascontiguousarray(Z if use_z else np.zeros((n, t)), dtype=np.float64)
    L_arr = np.zeros((n, t, t))
    logdet_arr = np.zeros(n)
    used_arr = np.zeros(n)
    ok_arr = np.zeros(n, dtype=np.uint8)
    cdef double[:, :, ::1] L = L_arr
    cdef double[::1] logdet = logdet_arr
    cdef double[::1] used = used_arr
    cdef unsigned char[::1] ok = ok_arr
    cdef int i
    for i in prange(n, nogil=True, num_threads=threads, schedule="static"):
        if factor_one(&X[0, 0], &Zv[i, 0], &phiv[i, 0], t, p, use_z, nugget,
                      &L[i, 0, 0], &used[i]) == 0:
            ok[i] = 1
            logdet[i] = logdet_chol(&L[i, 0, 0], t)
    return L_arr, logdet_arr, used_arr, ok_arr.astype(bool)


def loglik(double[:, ::1] X, double[::1] F, Z, phi, double nugget,
           double a, double b, int threads=1):
    """Log marginal likelihood of F for each particle (-inf where factorization fails)."""
    cdef int use_z = Z is not None
    cdef double[:, ::1] phiv = np.ascontiguousarray(phi, dtype=np.float64)
    cdef int n = phiv.shape[0]
    cdef int t = X.shape[0]
    cdef int p = X.shape[1]
    cdef int q = p + 1
    cdef double[:, ::1] Zv = np.ascontiguousarray(Z if use_z else np.zeros((n, t)), dtype=np.float64)
    out_arr = np.full(n, -np.inf)
    cdef double[::1] out = out_arr
    cdef double nu = t - p - 1
    cdef double const = (-0.5 * nu * log(2.0 * M_PI) + 0.5 * a * log(b / 2.0)
                         - lgamma(a / 2.0) + lgamma((a + nu) / 2.0))
    cdef int i
    cdef double* L
    cdef double* A
    cdef double* c
    cdef double* R
    cdef double* beta
    cdef double* resid
    cdef double* sc
    for i in prange(n, nogil=True, num_threads=threads, schedule="static"):
        L = <double*> malloc(sizeof(double) * (t * t + q * t + t + q * q + q + t + 3))
        A = L + t * t
        c = A + q * t
        R = c + t
        beta = R + q * q
        resid = beta + q
        sc = resid + t
        if factor_one(&X[0, 0], &Zv[i, 0], &phiv[i, 0], t, p, use_z, nugget, L, &sc[0]) == 0:
            if gls_one(L, &X[0, 0], &F[0], t, p, A, c, R, beta, resid, &sc[1], &sc[2]) == 0:
                out[i] = (const - 0.5 * logdet_chol(L, t) - 0.5 * sc[2]
                          - 0.5 * (a + nu) * log((b + sc[1]) / 2.0))
        free(L)
    return out_arr


def latent_logdens(double[:, ::1] X, Z, phit, double nugget, int threads=1):
    """log N(Z_i; 0, Kt(phit_i) + nugget I) for each particle."""
    cdef double[:, ::1] Zv = np.ascontiguousarray(Z, dtype=np.float64)
    cdef double[:, ::1] phiv = np.ascontiguousarray(phit, dtype=np.float64)
    cdef int n = phiv.shape[0]
    cdef int t = X.shape[0]
    cdef int p = X.shape[1]
    out_arr = np.full(n, -np.inf)
    cdef double[::1] out = out_arr
    cdef int i, j
    cdef double* L
    cdef double* v
    cdef double s
    for i in prange(n, nogil=True, num_threads=threads, schedule="static"):
        L = <double*> malloc(sizeof(double) * (t * t + t + 1))
        v = L + t * t
        if factor_one(&X[0, 0], &Zv[i, 0], &phiv[i, 0], t, p, 0, nugget, L, &v[t]) == 0:
            for j in range(t):
                v[j] = Zv[i, j]
            fwd(L, t, v)
            s = 0.0
            for j in range(t):
                s = s + v[j] * v[j]
            out[i] = -0.5 * s - 0.5 * logdet_chol(L, t) - 0.5 * t * log(2.0 * M_PI)
        free(L)
    return out_arr


def predict(double[:, ::1] X, double[::1] F, double[:, :, ::1] L, Z, phi,
            double[::1] nug, double[:, ::1] Xq, Zq, double a, double b,
            bint exact=True, int threads=1):
    """Per-particle predictive location and squared scale at the query rows.

    ``Zq`` (n, m) supplies each particle's latent coordinate at the queries
    when ``Z`` is given.  Returns (mean, var), both (n, m).
    """
    cdef int use_z = Z is not None
    cdef double[:, ::1] phiv = np.ascontiguousarray(phi, dtype=np.float64)
    cdef int n = phiv.shape[0]
    cdef int t = X.shape[0]
    cdef int p = X.shape[1]
    cdef int q = p + 1
    cdef int m = Xq.shape[0]
    cdef double[:, ::1] Zv = np.ascontiguousarray(Z if use_z else np.zeros((n, t)), dtype=np.float64)
    cdef double[:, ::1] Zqv = np.ascontiguousarray(Zq if use_z else np.zeros((n, m)), dtype=np.float64)
    mean_arr = np.full((n, m), np.nan)
    var_arr = np.full((n, m), np.nan)
    cdef double[:, ::1] mean = mean_arr
    cdef double[:, ::1] var = var_arr
    cdef double nu = t - p - 1
    cdef int i, j, l, r, kk
    cdef double* A
    cdef double* c
    cdef double* R
    cdef double* beta
    cdef double* resid
    cdef double* w
    cdef double* u
    cdef double s, d, mu, scale, sc
    for i in prange(n, nogil=True, num_threads=threads, schedule="static"):
        A = <double*> malloc(sizeof(double) * (q * t + t + q * q + q + t + t + q + 2))
        c = A + q * t
        R = c + t
        beta = R + q * q
        resid = beta + q
        w = resid + t
        u = w + t
        if gls_one(&L[i, 0, 0], &X[0, 0], &F[0], t, p, A, c, R, beta, resid,
                   &u[q], &u[q + 1]) == 0:
            scale = (b + u[q]) / (a + nu)
            for j in range(m):
                for r in range(t):
                    s = 0.0
                    for l in range(p):
                        d = Xq[j, l] - X[r, l]
                        s = s + phiv[i, l] * d * d
                    if use_z:
                        d = Zqv[i, j] - Zv[i, r]
                        s = s + phiv[i, p] * d * d
                    w[r] = exp(-s)
                fwd(&L[i, 0, 0], t, w)
                mu = beta[0]
                for l in range(p):
                    mu = mu + Xq[j, l] * beta[l + 1]
                sc = 1.0 + nug[i]
                for r in range(t):
                    mu = mu + w[r] * resid[r]
                    sc = sc - w[r] * w[r]
                if exact:
                    for l in range(q):
                        s = 1.0 if l == 0 else Xq[j, l - 1]
                        for r in range(t):
                            s = s - A[l * t + r] * w[r]
                        u[l] = s
                    fwd(R, q, u)
                    for l in range(q):
                        sc = sc + u[l] * u[l]
                mean[i, j] = mu
                var[i, j] = scale * sc if sc > 0.0 else 0.0
        free(A)
    return mean_arr, var_arr


def krige(double[:, ::1] X, double[:, :, ::1] L, Z, phit, double[::1] nug,
          double[:, ::1] Xq, int threads=1):
    """Zero-mean kriging of each particle's latent values at the query rows."""
    cdef double[:, ::1] Zv = np.ascontiguousarray(Z, dtype=np.float64)
    cdef double[:, ::1] phiv = np.ascontiguousarray(phit, dtype=np.float64)
    cdef int n = phiv.shape[0]
    cdef int t = X.shape[0]
    cdef int p = X.shape[1]
    cdef int m = Xq.shape[0]
    mu_arr = np.zeros((n, m))
    var_arr = np.zeros((n, m))
    cdef double[:, ::1] mu = mu_arr
    cdef double[:, ::1] var = var_arr
    cdef int i, j, l, r
    cdef double* zw
    cdef double* w
    cdef double s, d, m1, sc
    for i in prange(n, nogil=True, num_threads=threads, schedule="static"):
        zw = <double*> malloc(sizeof(double) * 2 * t)
        w = zw + t
        for r in range(t):
            zw[r] = Zv[i, r]
        fwd(&L[i, 0, 0], t, zw)
        for j in range(m):
            for r in range(t):
                s = 0.0
                for l in range(p):
                    d = Xq[j, l] - X[r, l]
                    s = s + phiv[i, l] * d * d
                w[r] = exp(-s)
            fwd(&L[i, 0, 0], t, w)
            m1 = 0.0
            sc = 1.0 + nug[i]
            for r in range(t):
                m1 = m1 + w[r] * zw[r]
                sc = sc - w[r] * w[r]
            mu[i, j] = m1
            var[i, j] = sc if sc > 0.0 else 0.0
        free(zw)
    return mu_arr, var_arr


def extend(double[:, :, ::1] L, double[:, ::1] X, Z, phi, double[::1] nug,
           double[::1] x_new, z_new, int threads=1):
    """Border each factor with one new point.

    Returns (L_new, dlogdet, ok); rows where the Schur complement is not
    positive come back with ok False and must be rebuilt by the caller.
    """
    cdef int use_z = Z is not None
    cdef double[:, ::1] phiv = np.ascontiguousarray(phi, dtype=np.float64)
    cdef int n = phiv.shape[0]
    cdef int t = X.shape[0]
    cdef int p = X.shape[1]
    cdef double[:, ::1] Zv = np.ascontiguousarray(Z if use_z else np.zeros((n, t)), dtype=np.float64)
    cdef double[::1] zn = np.ascontiguousarray(z_new if use_z else np.zeros(n), dtype=np.float64)
    out_arr = np.zeros((n, t + 1, t + 1))
    dl_arr = np.zeros(n)
    ok_arr = np.zeros(n, dtype=np.uint8)
    cdef double[:, :, ::1] out = out_arr
    cdef double[::1] dl = dl_arr
    cdef unsigned char[::1] ok = ok_arr
    cdef int i, r, c2, l
    cdef double* w
    cdef double s, d, d2
    for i in prange(n, nogil=True, num_threads=threads, schedule="static"):
        w = <double*> malloc(sizeof(double) * t)
        for r in range(t):
            s = 0.0
            for l in range(p):
                d = x_new[l] - X[r, l]
                s = s + phiv[i, l] * d * d
            if use_z:
                d = zn[i] - Zv[i, r]
                s = s + phiv[i, p] * d * d
            w[r] = exp(-s)
        fwd(&L[i, 0, 0], t, w)
        d2 = 1.0 + nug[i]
        for r in range(t):
            d2 = d2 - w[r] * w[r]
            for c2 in range(r + 1):
                out[i, r, c2] = L[i, r, c2]
            out[i, t, r] = w[r]
        if d2 > 0.0 and isfinite(d2):
            out[i, t, t] = sqrt(d2)
            dl[i] = log(d2)
            ok[i] = 1
        free(w)
    return out_arr, dl_arr, ok_arr.astype(bool)
