"""Cancellation-free evaluation of closed-form pieces in x = kappa * mu.

Each function has a power series used for small ``x`` where the closed
form loses digits to cancellation.
"""

from __future__ import annotations

import numpy as np

SMALL_X = 0.2
_NTERMS = 32

_k = np.arange(_NTERMS, dtype=np.float64)
_sign = np.where(_k % 2 == 0, 1.0, -1.0)

# (1+x)log(1+x) - x = sum_{k>=2} (-1)^k x^k / (k(k-1))
H_COEF = np.zeros(_NTERMS)
H_COEF[2:] = _sign[2:] / (_k[2:] * (_k[2:] - 1.0))

# 2log(1+x) - 2x/(1+x) - (x^2 + x^3)/(1+x)^2 = sum_{k>=3} (-1)^k (k-2) x^k / k
N_COEF = np.zeros(_NTERMS)
N_COEF[3:] = _sign[3:] * (_k[3:] - 2.0) / _k[3:]

# (2x^3 + 9x^2 + 6x)/(1+x)^2 - 6log(1+x) = sum_{k>=4} (-1)^k (k-3)(k-2) x^k / k
T_COEF = np.zeros(_NTERMS)
T_COEF[4:] = _sign[4:] * (_k[4:] - 3.0) * (_k[4:] - 2.0) / _k[4:]


def _poly(coef: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    for c in coef[::-1]:
        out = out * x + c
    return out


def _piecewise(x, closed, coef):
    x = np.asarray(x, dtype=np.float64)
    small = np.abs(x) < SMALL_X
    out = np.empty_like(x)
    if np.any(small):
        out[small] = _poly(coef, x[small])
    if np.any(~small):
        out[~small] = closed(x[~small])
    return out


def hfun(x):
    """(1+x) log(1+x) - x."""
    return _piecewise(x, lambda v: (1.0 + v) * np.log1p(v) - v, H_COEF)


def nfun(x):
    """Non-random part of the dispersion information, scaled by kappa**3."""

    def closed(v):
        opv = 1.0 + v
        return 2.0 * np.log1p(v) - 2.0 * v / opv - (v * v + v**3) / (opv * opv)

    return _piecewise(x, closed, N_COEF)


def tfun(x):
    """Non-random part of the third-order dispersion cumulants, scaled by kappa**4."""

    def closed(v):
        opv = 1.0 + v
        return (2.0 * v**3 + 9.0 * v * v + 6.0 * v) / (opv * opv) - 6.0 * np.log1p(v)

    return _piecewise(x, closed, T_COEF)
