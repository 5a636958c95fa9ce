"""Batched elliptical slice sampling.

Each row of the state is an independent chain whose prior is a zero-mean
Gaussian.  All rows share one shrinkage loop, and every iteration only
re-evaluates the likelihood for the rows that have not yet accepted.
"""

from __future__ import annotations

import math

import numpy as np

MAX_SHRINK = 1000


class ShrinkageLimitError(RuntimeError):
    pass


def elliptical_slice(x, nu, loglik_fn, cur_ll, rng: np.random.Generator, max_shrink: int = MAX_SHRINK):
    """One elliptical slice update for every row of ``x``.

    Parameters
    ----------
    x : ndarray, shape (n, d)
        Current states, already centred on the prior mean.
    nu : ndarray, shape (n, d)
        One draw per row from the (centred) Gaussian prior.
    loglik_fn : callable
        ``loglik_fn(proposals, rows)`` returns the log-likelihood of the
        proposed states ``proposals`` (shape ``(len(rows), d)``) for the chains
        listed in ``rows``.
    cur_ll : ndarray, shape (n,)
        Log-likelihood of the current states.
    rng : numpy.random.Generator

    Returns
    -------
    new_x, new_ll : ndarray
    """
    x = np.asarray(x, dtype=float)
    nu = np.asarray(nu, dtype=float)
    n = x.shape[0]
    cur_ll = np.asarray(cur_ll, dtype=float)
    log_y = cur_ll + np.log(rng.uniform(size=n))
    theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
    lo = theta - 2.0 * math.pi
    hi = theta.copy()
    new_x = x.copy()
    new_ll = cur_ll.copy()
    rows = np.arange(n)
    for _ in range(max_shrink):
        th = theta[rows][:, None]
        prop = x[rows] * np.cos(th) + nu[rows] * np.sin(th)
        ll = np.asarray(loglik_fn(prop, rows), dtype=float)
        acc = ll > log_y[rows]
        new_x[rows[acc]] = prop[acc]
        new_ll[rows[acc]] = ll[acc]
        rows = rows[~acc]
        if rows.size == 0:
            return new_x, new_ll
        neg = theta[rows] < 0
        lo[rows] = np.where(neg, theta[rows], lo[rows])
        hi[rows] = np.where(neg, hi[rows], theta[rows])
        theta[rows] = rng.uniform(lo[rows], hi[rows])
    raise ShrinkageLimitError(
        f"elliptical slice sampler did not accept within {max_shrink} shrinkage steps "
        f"for {rows.size} chain(s)"
    )
