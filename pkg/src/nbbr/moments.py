"""Truncated series for the expectations entering the information and adjustments.

For a count Y ~ NB(mu, kappa) define S_a(y) = sum_{j<y} j**a / (1 + kappa j)**a.
The expectations E(S1), E(S2), E(S3), E(S1 S2) and E(S2 Y) are computed
by walking the support with the pmf recurrence until the survival mass
and the relative size of the last summand both drop below ``tail_eps``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import kernels
from ._series import nfun
from .errors import DomainError, SeriesTruncationError


@dataclass(frozen=True)
class SeriesControl:
    tail_eps: float = 1e-12
    max_terms: int = 100_000

    def __post_init__(self):
        if not 0 < self.tail_eps < 1:
            raise ValueError("tail_eps must lie in (0, 1)")
        if self.max_terms < 1:
            raise ValueError("max_terms must be at least 1")


DEFAULT_CONTROL = SeriesControl()


@dataclass(frozen=True)
class ExpectationTable:
    mu: float
    kappa: float
    e_s1: float
    e_s2: float
    e_s3: float
    e_s1s2: float
    e_s2y: float
    info_kappa_term: float
    terms_used: int


def _check(mu, kappa):
    if not (np.all(np.isfinite(mu)) and np.all(np.asarray(mu) > 0)):
        raise DomainError("series need finite positive means")
    if not (math.isfinite(kappa) and kappa > 0):
        raise DomainError("series need a finite positive kappa")


def tail_probabilities(mu: float, kappa: float, control: SeriesControl = DEFAULT_CONTROL):
    """Pr(Y > j) for j = 0..J, where J is the first index with Pr(Y > J) < tail_eps."""
    _check(mu, kappa)
    out = kernels.tail_probabilities(float(mu), float(kappa), control.tail_eps, control.max_terms)
    if out.shape[0] == 0:
        raise SeriesTruncationError(
            f"survival series at mu={mu}, kappa={kappa} did not reach {control.tail_eps} "
            f"within {control.max_terms} terms"
        )
    return out


def info_kappa_terms(e_s2, mu, kappa):
    """Per-observation (unit weight) dispersion information on the kappa scale.

    Uses E(S2) and a series-protected closed form in place of the
    sum over Pr(Y > j); the two are algebraically identical.
    """
    return e_s2 + nfun(kappa * np.asarray(mu)) / kappa**3


def series_arrays(mu, kappa, control: SeriesControl = DEFAULT_CONTROL):
    """Expectation columns for each entry of ``mu``, shared across repeated means.

    Returns a dict of arrays keyed ``e_s1, e_s2, e_s3, e_s1s2, e_s2y, info, terms``.
    """
    mu = np.asarray(mu, dtype=np.float64)
    kappa = float(kappa)
    _check(mu, kappa)
    uniq, inverse = np.unique(mu, return_inverse=True)
    table, terms = kernels.series_expectations(uniq, kappa, control.tail_eps, control.max_terms)
    if np.any(terms < 0):
        bad = uniq[terms < 0][0]
        raise SeriesTruncationError(
            f"expectation series at mu={bad}, kappa={kappa} did not settle "
            f"within {control.max_terms} terms"
        )
    info = info_kappa_terms(table[:, 1], uniq, kappa)
    cols = ("e_s1", "e_s2", "e_s3", "e_s1s2", "e_s2y")
    out = {name: table[inverse, k] for k, name in enumerate(cols)}
    out["info"] = info[inverse]
    out["terms"] = terms[inverse]
    return out


def expectation_table(mu: float, kappa: float, control: SeriesControl = DEFAULT_CONTROL):
    cols = series_arrays(np.array([float(mu)]), kappa, control)
    return ExpectationTable(
        mu=float(mu),
        kappa=float(kappa),
        e_s1=float(cols["e_s1"][0]),
        e_s2=float(cols["e_s2"][0]),
        e_s3=float(cols["e_s3"][0]),
        e_s1s2=float(cols["e_s1s2"][0]),
        e_s2y=float(cols["e_s2y"][0]),
        info_kappa_term=float(cols["info"][0]),
        terms_used=int(cols["terms"][0]),
    )


def info_kappa(mu_list, m_list, kappa: float, control: SeriesControl = DEFAULT_CONTROL) -> float:
    """Expected information for kappa summed over observations with prior weights."""
    mu_list = np.atleast_1d(np.asarray(mu_list, dtype=np.float64))
    m_list = np.broadcast_to(np.asarray(m_list, dtype=np.float64), mu_list.shape)
    cols = series_arrays(mu_list, kappa, control)
    return math.fsum(m_list * cols["info"])


def brute_force_expectation(f, mu: float, kappa: float, tol: float = 1e-14, max_y: int = 2_000_000):
    """E f(Y) by direct enumeration against scipy's NB pmf.

    ``f`` maps an integer array of support points to values. Enumeration
    grows until the pmf tail falls below ``tol`` and the partial sums stop moving.
    """
    size = 1.0 / kappa
    prob = 1.0 / (1.0 + kappa * mu)
    dist = stats.nbinom(size, prob)
    top = max(64, int(dist.ppf(1.0 - 1e-6)) * 4)
    prev = None
    while top <= max_y:
        ys = np.arange(top + 1)
        pmf = dist.pmf(ys)
        vals = np.asarray(f(ys), dtype=np.float64) * pmf
        total = math.fsum(vals)
        tail = dist.sf(top)
        if tail < tol and prev is not None and abs(total - prev) <= tol * max(abs(total), 1e-300):
            return total
        prev = total
        top *= 2
    raise SeriesTruncationError(f"enumeration did not converge by y={max_y}")
