"""Score, expected information and the mean / median bias-reducing adjustments.

Notation follows the usual GLM conventions: ``d = dmu/deta``,
``v = mu + kappa mu^2``, working weights ``w = m d^2 / v`` and hat values
``h`` from the weighted projection onto the columns of ``X``.  The
dispersion enters through ``phi`` with ``kappa = kappa(phi)``; the mean
and dispersion blocks of the expected information are orthogonal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from ._series import hfun, tfun
from .errors import RankError
from .model import MU_FLOOR, ModelSpec, ParameterPoint
from .moments import DEFAULT_CONTROL, SeriesControl, series_arrays
from . import kernels


@dataclass(frozen=True, eq=False)
class WorkingQuantities:
    eta: np.ndarray
    mu: np.ndarray
    d: np.ndarray
    dprime: np.ndarray
    v: np.ndarray
    vprime: np.ndarray
    w: np.ndarray
    h: np.ndarray
    xi: np.ndarray
    kappa: float
    kprime: float
    kdoubleprime: float
    # upper-triangular factor of sqrt(w) X, i.e. X'WX = R'R
    R: np.ndarray
    Q: np.ndarray
    mu_floored: bool = False


@dataclass(frozen=True, eq=False)
class AdjustmentBlocks:
    a_beta: np.ndarray
    a_phi: float
    r_betabeta: np.ndarray
    r_betaphi: np.ndarray
    r_phiphi: float
    s_phiphi: float
    u: np.ndarray


def _weighted_qr(X, w):
    sw = np.sqrt(w)
    Q, R = np.linalg.qr(X * sw[:, None])
    diag = np.abs(np.diag(R))
    tol = max(X.shape) * np.finfo(float).eps * (diag.max() if diag.size else 0.0)
    if diag.size == 0 or np.any(diag <= tol) or not np.all(np.isfinite(R)):
        raise RankError("weighted design matrix is rank deficient")
    return Q, R


def hat_values(X, w) -> np.ndarray:
    """Diagonal of X (X'WX)^{-1} X'W from a QR factorization of W^{1/2} X."""
    X = np.asarray(X, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if np.any(w <= 0):
        raise RankError("working weights must be positive")
    Q, _ = _weighted_qr(X, w)
    return np.einsum("ij,ij->i", Q, Q)


def working_quantities(spec: ModelSpec, theta: ParameterPoint) -> WorkingQuantities:
    kappa, kp, kpp = spec.transform.evaluate(theta.phi)
    eta = spec.X @ theta.beta
    mu, d, dprime = spec.link.evaluate(eta)
    floored = bool(np.any(mu < MU_FLOOR))
    if floored:
        mu = np.maximum(mu, MU_FLOOR)
    v = mu + kappa * mu * mu
    vprime = 1.0 + 2.0 * kappa * mu
    w = spec.m * d * d / v
    if not np.all(w > 0):
        raise RankError("working weights must be positive")
    Q, R = _weighted_qr(spec.X, w)
    h = np.einsum("ij,ij->i", Q, Q)
    xi = h * dprime / (2.0 * d * w)
    return WorkingQuantities(
        eta=eta, mu=mu, d=d, dprime=dprime, v=v, vprime=vprime, w=w, h=h, xi=xi,
        kappa=kappa, kprime=kp, kdoubleprime=kpp, R=R, Q=Q, mu_floored=floored,
    )


def _inverse_info_beta(wq: WorkingQuantities) -> np.ndarray:
    rinv = solve_triangular(wq.R, np.eye(wq.R.shape[0]))
    return rinv @ rinv.T


def score(spec: ModelSpec, theta: ParameterPoint, wq: WorkingQuantities | None = None):
    """Gradient of the log-likelihood in (beta, phi)."""
    wq = wq or working_quantities(spec, theta)
    mu, kappa = wq.mu, wq.kappa
    u_beta = spec.X.T @ (spec.m * wq.d * (spec.y - mu) / wq.v)
    _, s1 = kernels.data_sums(spec.y, kappa)
    x = kappa * mu
    per_obs = s1 - mu * spec.y / (1.0 + x) + hfun(x) / (kappa**2 * (1.0 + x))
    u_phi = wq.kprime * math.fsum(spec.m * per_obs)
    return u_beta, u_phi


def expected_information(
    spec: ModelSpec,
    theta: ParameterPoint,
    wq: WorkingQuantities | None = None,
    tables: dict | None = None,
    control: SeriesControl = DEFAULT_CONTROL,
):
    """Blocks ``(X'WX, i_phiphi)``; the beta-phi block is zero."""
    wq = wq or working_quantities(spec, theta)
    tables = tables or series_arrays(wq.mu, wq.kappa, control)
    i_bb = wq.R.T @ wq.R
    i_kk = math.fsum(spec.m * tables["info"])
    return i_bb, wq.kprime**2 * i_kk


def _kappa_info(spec, tables):
    return math.fsum(spec.m * tables["info"])


def r_blocks(
    spec: ModelSpec,
    theta: ParameterPoint,
    wq: WorkingQuantities | None = None,
    tables: dict | None = None,
    control: SeriesControl = DEFAULT_CONTROL,
):
    """Blocks of P_phi + Q_phi: ``(R_betabeta, R_betaphi, R_phiphi)``."""
    wq = wq or working_quantities(spec, theta)
    tables = tables or series_arrays(wq.mu, wq.kappa, control)
    X, m = spec.X, spec.m
    mu, kappa, kp = wq.mu, wq.kappa, wq.kprime
    x = kappa * mu
    opx = 1.0 + x

    r_bb = kp * (X.T * (wq.d**2 * m * mu**2 / wq.v**2)) @ X
    r_bb = 0.5 * (r_bb + r_bb.T)

    bracket = tables["e_s2y"] - mu * tables["e_s2"] - mu**3 / opx
    r_bp = kp**2 * X.T @ (wq.d * m * bracket / (mu * opx))

    per_obs = (
        -2.0 * tables["e_s3"]
        + tfun(x) / kappa**4
        + 2.0 * tables["e_s1s2"]
        - 2.0 * mu / opx * tables["e_s2y"]
        + 2.0 * hfun(x) / (kappa**2 * opx) * tables["e_s2"]
    )
    r_pp = kp**3 * math.fsum(m * per_obs) + _kappa_info(spec, tables) * kp * wq.kdoubleprime
    return r_bb, r_bp, r_pp


def s_phiphi(
    spec: ModelSpec,
    theta: ParameterPoint,
    tables: dict | None = None,
    wq: WorkingQuantities | None = None,
    control: SeriesControl = DEFAULT_CONTROL,
) -> float:
    """Dispersion block of P_phi/3 + Q_phi/2 used by the median adjustment."""
    wq = wq or working_quantities(spec, theta)
    tables = tables or series_arrays(wq.mu, wq.kappa, control)
    mu, kappa, kp = wq.mu, wq.kappa, wq.kprime
    x = kappa * mu
    opx = 1.0 + x
    per_obs = (
        -2.0 / 3.0 * tables["e_s3"]
        + tfun(x) / (3.0 * kappa**4)
        + 0.5 * tables["e_s1s2"]
        - 0.5 * mu / opx * tables["e_s2y"]
        + hfun(x) / (2.0 * kappa**2 * opx) * tables["e_s2"]
    )
    return kp**3 * math.fsum(spec.m * per_obs) + 0.5 * _kappa_info(spec, tables) * kp * wq.kdoubleprime


def u_vector(spec: ModelSpec, theta: ParameterPoint, wq: WorkingQuantities | None = None):
    """Median-adjustment shift u, one entry per regression coefficient.

    With G = (X'WX)^{-1} and a = X G, the leverage of coefficient s is
    h_{s,i} = w_i a_is^2 / G_ss, and u_s = sum_i a_is h_{s,i} b_i with
    b_i = d_i v'_i / (6 v_i) - d'_i / (2 d_i).
    """
    wq = wq or working_quantities(spec, theta)
    rinv = solve_triangular(wq.R, np.eye(wq.R.shape[0]))
    G = rinv @ rinv.T
    a = spec.X @ G
    b = wq.d * wq.vprime / (6.0 * wq.v) - wq.dprime / (2.0 * wq.d)
    return (a**3 * (wq.w * b)[:, None]).sum(axis=0) / np.diag(G)


def _trace_term(spec, wq):
    # equals 0.5 tr(i_bb^{-1} R_bb)
    return wq.kprime * math.fsum(
        spec.m * wq.h * wq.d**2 * wq.mu**2 / (2.0 * wq.w * wq.v**2)
    )


def mean_adjustment(
    spec: ModelSpec,
    theta: ParameterPoint,
    wq: WorkingQuantities | None = None,
    tables: dict | None = None,
    control: SeriesControl = DEFAULT_CONTROL,
):
    wq = wq or working_quantities(spec, theta)
    tables = tables or series_arrays(wq.mu, wq.kappa, control)
    a_beta = spec.X.T @ (wq.w * wq.xi)
    _, _, r_pp = r_blocks(spec, theta, wq, tables)
    i_pp = wq.kprime**2 * _kappa_info(spec, tables)
    return a_beta, _trace_term(spec, wq) + 0.5 * r_pp / i_pp


def median_adjustment(
    spec: ModelSpec,
    theta: ParameterPoint,
    wq: WorkingQuantities | None = None,
    tables: dict | None = None,
    control: SeriesControl = DEFAULT_CONTROL,
    u: np.ndarray | None = None,
):
    """Median bias-reducing adjustment; pass ``u`` to override the shift vector."""
    wq = wq or working_quantities(spec, theta)
    tables = tables or series_arrays(wq.mu, wq.kappa, control)
    if u is None:
        u = u_vector(spec, theta, wq)
    a_beta = spec.X.T @ (wq.w * (wq.xi + spec.X @ u))
    _, a_phi_mean = mean_adjustment(spec, theta, wq, tables)
    i_pp = wq.kprime**2 * _kappa_info(spec, tables)
    s_pp = s_phiphi(spec, theta, tables, wq)
    return a_beta, a_phi_mean - s_pp / i_pp


def adjustment_blocks(
    spec: ModelSpec, theta: ParameterPoint, control: SeriesControl = DEFAULT_CONTROL
) -> AdjustmentBlocks:
    wq = working_quantities(spec, theta)
    tables = series_arrays(wq.mu, wq.kappa, control)
    r_bb, r_bp, r_pp = r_blocks(spec, theta, wq, tables)
    a_beta, a_phi = mean_adjustment(spec, theta, wq, tables)
    return AdjustmentBlocks(
        a_beta=a_beta,
        a_phi=a_phi,
        r_betabeta=r_bb,
        r_betaphi=r_bp,
        r_phiphi=r_pp,
        s_phiphi=s_phiphi(spec, theta, tables, wq),
        u=u_vector(spec, theta, wq),
    )


def first_order_bias(
    spec: ModelSpec, theta: ParameterPoint, control: SeriesControl = DEFAULT_CONTROL
) -> np.ndarray:
    """O(1/n) bias b = -i^{-1} A*, stacked as (beta..., phi)."""
    wq = working_quantities(spec, theta)
    tables = series_arrays(wq.mu, wq.kappa, control)
    a_beta, a_phi = mean_adjustment(spec, theta, wq, tables)
    z = solve_triangular(wq.R, a_beta, trans="T")
    b_beta = -solve_triangular(wq.R, z)
    i_pp = wq.kprime**2 * _kappa_info(spec, tables)
    return np.append(b_beta, -a_phi / i_pp)
