"""Fitting engine: ML, explicit bias correction, mean and median bias reduction.

Each outer iteration takes one IWLS step for beta on a (possibly adjusted)
working variate, then one Fisher-scoring step for phi with the beta just
computed.  Mean bias correction subtracts the first-order bias from the
ML estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy import stats
from scipy.linalg import solve_triangular

from . import adjust
from .errors import DomainError, RankError, SeriesTruncationError
from .model import ModelSpec, ParameterPoint, log_likelihood
from .moments import DEFAULT_CONTROL, SeriesControl, series_arrays

METHODS = ("ml", "mean_bc", "mean_br", "median_br")
FAILURE_KINDS = ("none", "max_iter", "domain", "rank", "series")

KAPPA_START_FLOOR = 0.01
_PINNED_LIMIT = 20


@dataclass(frozen=True)
class FitOptions:
    method: str = "ml"
    max_outer: int = 100
    tol: float = 1e-8
    max_halvings: int = 15
    kappa_floor: float = 1e-8
    start: ParameterPoint | None = None
    control: SeriesControl = field(default_factory=lambda: DEFAULT_CONTROL)

    def __post_init__(self):
        method = self.method.replace("-", "_")
        if method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        object.__setattr__(self, "method", method)
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_outer < 1:
            raise ValueError("max_outer must be at least 1")


@dataclass(frozen=True)
class ConvergenceReport:
    converged: bool
    outer_iterations: int
    final_step_norm: float
    boundary_flag: bool = False
    failure_kind: str = "none"
    mu_floored: bool = False
    message: str = ""


@dataclass(frozen=True, eq=False)
class FitResult:
    method: str
    theta: ParameterPoint
    kappa: float
    se: np.ndarray
    vcov_beta: np.ndarray
    var_phi: float
    report: ConvergenceReport
    loglik_at_estimate: float
    transform: str = "identity"

    @property
    def converged(self) -> bool:
        return self.report.converged

    @property
    def estimates(self) -> np.ndarray:
        return self.theta.as_vector()


class _Eval(NamedTuple):
    theta: ParameterPoint
    wq: adjust.WorkingQuantities
    tables: dict
    u_beta: np.ndarray
    u_phi: float
    a_beta: np.ndarray
    a_phi: float
    i_phiphi: float
    u: np.ndarray | None

    @property
    def phi_score(self) -> float:
        return self.u_phi + self.a_phi


def _evaluate(spec: ModelSpec, theta: ParameterPoint, method: str, control: SeriesControl) -> _Eval:
    wq = adjust.working_quantities(spec, theta)
    tables = series_arrays(wq.mu, wq.kappa, control)
    u_beta, u_phi = adjust.score(spec, theta, wq)
    _, i_pp = adjust.expected_information(spec, theta, wq, tables)
    u = None
    if method == "mean_br":
        a_beta, a_phi = adjust.mean_adjustment(spec, theta, wq, tables)
    elif method == "median_br":
        u = adjust.u_vector(spec, theta, wq)
        a_beta, a_phi = adjust.median_adjustment(spec, theta, wq, tables, u=u)
    else:
        a_beta, a_phi = np.zeros(spec.p), 0.0
    if not (np.isfinite(i_pp) and i_pp > 0 and np.isfinite(a_phi) and np.isfinite(u_phi)):
        raise DomainError("dispersion information or score is not finite")
    return _Eval(theta, wq, tables, u_beta, u_phi, a_beta, a_phi, i_pp, u)


def moment_kappa(mean: float, var: float) -> float:
    """Method-of-moments dispersion, floored at 0.01."""
    if not mean > 0:
        return KAPPA_START_FLOOR
    return max((var - mean) / mean**2, KAPPA_START_FLOOR)


def starting_values(spec: ModelSpec) -> ParameterPoint:
    """Weighted least squares on the linked counts plus a moment estimate of kappa."""
    y = spec.y.astype(np.float64)
    ystar = np.where(spec.y == 0, 0.5, y)
    z = spec.link.link(ystar)
    sm = np.sqrt(spec.m)
    Q, R = adjust._weighted_qr(spec.X, spec.m)
    beta0 = solve_triangular(R, Q.T @ (sm * z))
    mu0, _, _ = spec.link.evaluate(spec.X @ beta0)
    msum = spec.m.sum()
    dof = msum - spec.p if msum > spec.p else msum
    s2 = float(np.dot(spec.m, (y - mu0) ** 2) / dof)
    ybar = float(np.dot(spec.m, mu0) / msum)
    kappa0 = moment_kappa(ybar, s2)
    return ParameterPoint(beta0, spec.transform.phi(kappa0))


def iwls_beta_step(
    spec: ModelSpec,
    theta: ParameterPoint,
    method: str = "ml",
    control: SeriesControl = DEFAULT_CONTROL,
    _ev: _Eval | None = None,
) -> np.ndarray:
    """One weighted least squares step on the (adjusted) working variate."""
    method = method.replace("-", "_")
    ev = _ev or _evaluate(spec, theta, method, control)
    wq = ev.wq
    z = wq.eta + (spec.y - wq.mu) / wq.d
    if method in ("mean_br", "median_br"):
        z = z + wq.xi
    if method == "median_br":
        z = z + spec.X @ ev.u
    rhs = wq.Q.T @ (np.sqrt(wq.w) * z)
    return solve_triangular(wq.R, rhs)


@dataclass
class _PhiStep:
    phi: float
    ev: _Eval | None
    at_floor: bool


def _phi_step(spec, ev: _Eval, method, options: FitOptions) -> _PhiStep:
    transform = spec.transform
    phi = ev.theta.phi
    g0 = ev.phi_score
    delta = g0 / ev.i_phiphi
    beta = ev.theta.beta
    small = abs(delta) <= options.tol
    below_floor = False
    for k in range(options.max_halvings + 1):
        cand = phi + delta / 2.0**k
        try:
            kappa = transform.evaluate(cand)[0]
        except DomainError:
            below_floor = True
            continue
        if kappa <= options.kappa_floor:
            below_floor = True
            continue
        try:
            ev_c = _evaluate(spec, ParameterPoint(beta, cand), method, options.control)
        except (DomainError, RankError):
            continue
        if small or abs(ev_c.phi_score) <= abs(g0):
            return _PhiStep(cand, ev_c, False)
    if below_floor:
        # the step keeps pushing kappa through the floor: pin it there
        floor_phi = transform.phi(options.kappa_floor * (1.0 + 1e-9))
        ev_f = _evaluate(spec, ParameterPoint(beta, floor_phi), method, options.control)
        return _PhiStep(floor_phi, ev_f, True)
    raise DomainError("step halving on phi exhausted without reducing the adjusted score")


def fisher_phi_step(
    spec: ModelSpec,
    theta: ParameterPoint,
    method: str = "ml",
    options: FitOptions | None = None,
) -> float:
    """One guarded Fisher-scoring step for phi at fixed beta."""
    method = method.replace("-", "_")
    options = options or FitOptions(method=method if method != "mean_bc" else "ml")
    ev = _evaluate(spec, theta, method, options.control)
    return _phi_step(spec, ev, method, options).phi


def _beta_update(spec, ev: _Eval, method, options):
    """IWLS step with halving towards the current beta when the mean leaves its domain."""
    beta = ev.theta.beta
    target = iwls_beta_step(spec, ev.theta, method, options.control, _ev=ev)
    step = target - beta
    last_err: Exception | None = None
    for k in range(options.max_halvings + 1):
        cand = beta + step / 2.0**k
        try:
            ev_b = _evaluate(spec, ParameterPoint(cand, ev.theta.phi), method, options.control)
            return cand, ev_b
        except (DomainError, RankError) as err:
            last_err = err
    raise last_err


def _failure(err: Exception) -> str:
    if isinstance(err, RankError):
        return "rank"
    if isinstance(err, SeriesTruncationError):
        return "series"
    return "domain"


def _finish(spec, method, theta, report, options) -> FitResult:
    p = spec.p
    se = np.full(p + 1, np.nan)
    vcov = np.full((p, p), np.nan)
    var_phi = math.nan
    kappa = math.nan
    loglik = math.nan
    try:
        kappa = theta.kappa(spec.transform)
        wq = adjust.working_quantities(spec, theta)
        tables = series_arrays(wq.mu, wq.kappa, options.control)
        _, i_pp = adjust.expected_information(spec, theta, wq, tables)
        vcov = adjust._inverse_info_beta(wq)
        vcov = 0.5 * (vcov + vcov.T)
        var_phi = 1.0 / i_pp
        se = np.sqrt(np.append(np.diag(vcov), var_phi))
        loglik = log_likelihood(spec, theta)
        if wq.mu_floored:
            report = replace(report, mu_floored=True)
    except (DomainError, RankError, SeriesTruncationError, FloatingPointError):
        pass
    return FitResult(
        method=method,
        theta=theta,
        kappa=kappa,
        se=se,
        vcov_beta=vcov,
        var_phi=var_phi,
        report=report,
        loglik_at_estimate=loglik,
        transform=spec.transform.kind,
    )


def _iterate(spec: ModelSpec, method: str, options: FitOptions) -> FitResult:
    iterations = 0
    step_norm = math.inf
    theta = None
    pinned = 0
    try:
        theta = options.start or starting_values(spec)
        ev = _evaluate(spec, theta, method, options.control)
        for iterations in range(1, options.max_outer + 1):
            beta_new, ev_b = _beta_update(spec, ev, method, options)
            ph = _phi_step(spec, ev_b, method, options)
            step_norm = max(
                float(np.max(np.abs(beta_new - theta.beta))), abs(ph.phi - theta.phi)
            )
            ev = ph.ev
            theta = ev.theta
            pinned = pinned + 1 if ph.at_floor else 0
            if ph.at_floor and (step_norm <= options.tol or pinned >= _PINNED_LIMIT):
                report = ConvergenceReport(
                    False, iterations, step_norm, True, "domain",
                    message="dispersion driven to the kappa floor",
                )
                return _finish(spec, method, theta, report, options)
            if step_norm <= options.tol and not ph.at_floor:
                report = ConvergenceReport(True, iterations, step_norm)
                return _finish(spec, method, theta, report, options)
        report = ConvergenceReport(
            False, iterations, step_norm, pinned > 0, "max_iter",
            message=f"no convergence after {options.max_outer} outer iterations",
        )
    except (DomainError, RankError, SeriesTruncationError, FloatingPointError, np.linalg.LinAlgError) as err:
        report = ConvergenceReport(False, iterations, step_norm, False, _failure(err), message=str(err))
        if theta is None:
            theta = ParameterPoint(np.full(spec.p, np.nan), math.nan)
    return _finish(spec, method, theta, report, options)


def fit(spec: ModelSpec, options: FitOptions | None = None, **kwargs) -> FitResult:
    """Fit the model; keyword arguments are forwarded to :class:`FitOptions`."""
    if options is None:
        options = FitOptions(**kwargs)
    elif kwargs:
        options = replace(options, **kwargs)
    method = options.method
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        if method != "mean_bc":
            return _iterate(spec, method, options)
        return bias_correct(spec, _iterate(spec, "ml", options), options)


def bias_correct(spec: ModelSpec, ml: FitResult, options: FitOptions | None = None) -> FitResult:
    """Explicit correction of an ML fit; fails whenever the ML fit failed."""
    options = options or FitOptions()
    if not ml.converged:
        return replace(ml, method="mean_bc")
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        try:
            bias = adjust.first_order_bias(spec, ml.theta, options.control)
            corrected = ParameterPoint.from_vector(ml.theta.as_vector() - bias)
            corrected.kappa(spec.transform)
            spec.link.evaluate(spec.X @ corrected.beta)
        except (DomainError, RankError, SeriesTruncationError) as err:
            report = replace(ml.report, converged=False, failure_kind=_failure(err), message=str(err))
            return replace(ml, method="mean_bc", report=report)
        return _finish(spec, "mean_bc", corrected, ml.report, options)


def wald_intervals(result: FitResult, level: float = 0.95, kappa_scale: bool = False, transform=None):
    """Estimate +/- z * se for every component (dispersion on the fitted phi scale).

    With ``kappa_scale=True`` the dispersion interval endpoints are mapped
    through kappa(phi) and reordered.
    """
    if not result.converged:
        raise ValueError("Wald intervals need a converged fit")
    if not 0 <= level < 1:
        raise ValueError("level must lie in [0, 1)")
    z = stats.norm.ppf(0.5 + level / 2.0)
    est = result.theta.as_vector()
    half = z * result.se
    out = np.column_stack((est - half, est + half))
    if kappa_scale:
        from .model import DispersionTransform

        tr = transform or DispersionTransform(result.transform)
        ends = []
        for end in out[-1]:
            try:
                ends.append(tr.evaluate(end)[0])
            except DomainError:
                ends.append(0.0 if tr.kind in ("identity", "sqrt") else math.inf)
        out[-1] = sorted(ends)
    return out
