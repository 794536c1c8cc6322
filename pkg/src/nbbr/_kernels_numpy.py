"""Pure-numpy twins of the kernels in ``_kernels_numba``.

The series are evaluated on geometrically growing blocks of support
points; the truncation point is the same as the sequential kernel's.
"""

from __future__ import annotations

import math

import numpy as np

N_EXPECT = 5
_FAR_TAIL = 1e-6
_FIRST_BLOCK = 64


def _support_block(mu, kappa, n):
    """Support 0..n-1, pmf, and an upper bound on Pr(Y > y) from the pmf ratio."""
    x = kappa * mu
    a = 1.0 / kappa
    r = x / (1.0 + x)
    logf0 = -math.log1p(x) / kappa
    logr = math.log(x) - math.log1p(x)
    y = np.arange(n, dtype=np.float64)
    steps = np.log((y[:-1] + a) / (y[:-1] + 1.0)) + logr
    logf = np.empty(n)
    logf[0] = logf0
    logf[1:] = logf0 + np.cumsum(steps)
    f = np.exp(logf)
    q = np.maximum((y + a) / (y + 1.0) * r, r)
    with np.errstate(divide="ignore"):
        bound = np.where(q < 1.0, f * q / (1.0 - q), np.inf)
    return y, f, bound


def _tail_small(inc, r, running, tail_eps):
    prev = np.zeros_like(inc)
    prev[:, 1:] = inc[:, :-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(prev > 0.0, inc / prev, 0.0)
    q = np.maximum(ratio, r)
    with np.errstate(divide="ignore"):
        projected = np.where(q < 1.0, np.abs(inc) / (1.0 - q), np.inf)
    return (inc == 0.0) | (projected <= tail_eps * np.abs(running))


def _one_table(mu, kappa, tail_eps, max_terms):
    n = min(_FIRST_BLOCK, max_terms)
    while True:
        y, f, bound = _support_block(mu, kappa, n)
        t = y / (1.0 + kappa * y)
        s1 = np.concatenate(([0.0], np.cumsum(t[:-1])))
        s2 = np.concatenate(([0.0], np.cumsum(t[:-1] ** 2)))
        s3 = np.concatenate(([0.0], np.cumsum(t[:-1] ** 3)))
        inc = np.vstack((f * s1, f * s2, f * s3, f * s1 * s2, f * s2 * y))
        running = np.cumsum(inc, axis=1)
        settled = (bound < tail_eps) & np.all(
            _tail_small(inc, kappa * mu / (1.0 + kappa * mu), running, tail_eps), axis=0
        )
        hit = np.flatnonzero(settled)
        if hit.size:
            stop = hit[0] + 1
            return [math.fsum(row[:stop]) for row in inc], stop
        if n >= max_terms:
            return None, -1
        n = min(2 * n, max_terms)


def series_expectations(mu, kappa, tail_eps, max_terms):
    mu = np.asarray(mu, dtype=np.float64)
    table = np.zeros((mu.shape[0], N_EXPECT))
    terms = np.zeros(mu.shape[0], dtype=np.int64)
    for i, m in enumerate(mu):
        row, used = _one_table(float(m), kappa, tail_eps, max_terms)
        terms[i] = used
        if row is not None:
            table[i] = row
    return table, terms


def tail_probabilities(mu, kappa, tail_eps, max_terms):
    n = min(_FIRST_BLOCK, max_terms)
    while True:
        _, f, bound = _support_block(mu, kappa, n)
        hit = np.flatnonzero(bound <= _FAR_TAIL * tail_eps)
        if hit.size:
            stop = hit[0]
            # backward sums keep relative accuracy in the far tail
            surv = np.concatenate(([0.0], np.cumsum(f[stop:0:-1])))[::-1] + bound[stop]
            first = np.flatnonzero(surv < tail_eps)[0]
            return surv[: first + 1].copy()
        if n >= max_terms:
            return f[:0]
        n = min(2 * n, max_terms)


def data_sums(y, kappa):
    y = np.asarray(y, dtype=np.int64)
    top = int(y.max()) if y.size else 0
    j = np.arange(top, dtype=np.float64)
    lgr = np.concatenate(([0.0], np.cumsum(np.log1p(kappa * j))))
    s1 = np.concatenate(([0.0], np.cumsum(j / (1.0 + kappa * j))))
    return lgr[y], s1[y]
