"""numba kernels for the per-observation count series.

Every function here has a twin with the same signature in
``_kernels_numpy``; ``nbbr.kernels`` picks one at import time.
"""

from __future__ import annotations

import math

import numba
import numpy as np

N_EXPECT = 5
# the survival walk continues until the unsummed tail is this fraction of tail_eps
_FAR_TAIL = 1e-6


@numba.njit(cache=True, nogil=True)
def _neumaier_add(acc, comp, k, v):
    s = acc[k] + v
    if abs(acc[k]) >= abs(v):
        comp[k] += (acc[k] - s) + v
    else:
        comp[k] += (v - s) + acc[k]
    acc[k] = s


@numba.njit(cache=True, nogil=True)
def _pmf_tail_bound(f, y, a, r):
    # Pr(Y > y) <= f q/(1 - q) once every later pmf ratio is at most q < 1;
    # the ratios (j + a)/(j + 1) r are monotone in j with limit r
    q = (y + a) / (y + 1.0) * r
    if q < r:
        q = r
    if q >= 1.0:
        return math.inf
    return f * q / (1.0 - q)


@numba.njit(cache=True, nogil=True)
def _tail_small(inc, prev, r, total, tail_eps):
    # geometric projection of the unsummed tail, ratio at least the pmf's limit r
    if inc == 0.0:
        return True
    q = r
    if prev > 0.0 and inc / prev > q:
        q = inc / prev
    if q >= 1.0:
        return False
    return abs(inc) / (1.0 - q) <= tail_eps * abs(total)


@numba.njit(cache=True, nogil=True)
def _one_table(mu, kappa, tail_eps, max_terms, out):
    x = kappa * mu
    a = 1.0 / kappa
    logf = -math.log1p(x) / kappa
    logr = math.log(x) - math.log1p(x)
    acc = np.zeros(N_EXPECT)
    comp = np.zeros(N_EXPECT)
    inc = np.zeros(N_EXPECT)
    prev = np.zeros(N_EXPECT)
    r = x / (1.0 + x)
    s1 = 0.0
    s2 = 0.0
    s3 = 0.0
    y = 0
    while True:
        f = math.exp(logf)
        inc[0] = f * s1
        inc[1] = f * s2
        inc[2] = f * s3
        inc[3] = f * s1 * s2
        inc[4] = f * s2 * y
        for k in range(N_EXPECT):
            _neumaier_add(acc, comp, k, inc[k])
        if _pmf_tail_bound(f, y, a, r) < tail_eps:
            settled = True
            for k in range(N_EXPECT):
                if not _tail_small(inc[k], prev[k], r, acc[k] + comp[k], tail_eps):
                    settled = False
                    break
            if settled:
                break
        for k in range(N_EXPECT):
            prev[k] = inc[k]
        t = y / (1.0 + kappa * y)
        s1 += t
        s2 += t * t
        s3 += t * t * t
        logf += math.log((y + a) / (y + 1.0)) + logr
        y += 1
        if y >= max_terms:
            return -1
    for k in range(N_EXPECT):
        out[k] = acc[k] + comp[k]
    return y + 1


@numba.njit(cache=True, nogil=True)
def series_expectations(mu, kappa, tail_eps, max_terms):
    """E(S1), E(S2), E(S3), E(S1 S2), E(S2 Y) for each mean in ``mu``.

    Returns ``(table, terms)``; ``terms[i] == -1`` flags a series that hit
    ``max_terms`` before the tail settled.
    """
    n = mu.shape[0]
    table = np.zeros((n, N_EXPECT))
    terms = np.zeros(n, dtype=np.int64)
    for i in range(n):
        terms[i] = _one_table(mu[i], kappa, tail_eps, max_terms, table[i])
    return table, terms


@numba.njit(cache=True, nogil=True)
def tail_probabilities(mu, kappa, tail_eps, max_terms):
    """Pr(Y > j) for j = 0, 1, ... up to the first value below ``tail_eps``.

    Survival is summed backwards from the far tail, so small values keep
    full relative accuracy.  An empty array flags ``max_terms`` exhaustion.
    """
    x = kappa * mu
    a = 1.0 / kappa
    r = x / (1.0 + x)
    logr = math.log(x) - math.log1p(x)
    logf = -math.log1p(x) / kappa
    f = np.empty(64)
    j = 0
    while True:
        if j >= f.shape[0]:
            grown = np.empty(2 * f.shape[0])
            grown[: f.shape[0]] = f
            f = grown
        f[j] = math.exp(logf)
        bound = _pmf_tail_bound(f[j], j, a, r)
        if bound <= _FAR_TAIL * tail_eps:
            break
        if j + 1 >= max_terms:
            return f[:0]
        logf += math.log((j + a) / (j + 1.0)) + logr
        j += 1
    surv = np.empty(j + 1)
    acc = bound
    for k in range(j, -1, -1):
        surv[k] = acc
        acc += f[k]
    for k in range(j + 1):
        if surv[k] < tail_eps:
            return surv[: k + 1]
    return surv


@numba.njit(cache=True, nogil=True)
def data_sums(y, kappa):
    """sum_{j<y} log(1 + kappa j) and sum_{j<y} j/(1 + kappa j) per count."""
    n = y.shape[0]
    lgr = np.zeros(n)
    s1 = np.zeros(n)
    for i in range(n):
        a = 0.0
        b = 0.0
        for j in range(y[i]):
            a += math.log1p(kappa * j)
            b += j / (1.0 + kappa * j)
        lgr[i] = a
        s1[i] = b
    return lgr, s1
