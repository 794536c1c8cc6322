"""Negative binomial model: links, dispersion transforms, pmf and log-likelihood.

The dispersion ``kappa`` enters through the variance ``mu + kappa * mu**2``;
the fitted dispersion coordinate is ``phi`` with ``kappa = kappa(phi)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from . import kernels
from .errors import DomainError

MU_FLOOR = 1e-300

LINKS = ("log", "identity", "sqrt")
TRANSFORMS = ("identity", "log", "inverse", "sqrt")


@dataclass(frozen=True)
class LinkFunction:
    kind: str = "log"

    def __post_init__(self):
        if self.kind not in LINKS:
            raise ValueError(f"unknown link {self.kind!r}; expected one of {LINKS}")

    def link(self, mu):
        mu = np.asarray(mu, dtype=np.float64)
        if self.kind == "log":
            return np.log(mu)
        if self.kind == "identity":
            return mu.copy()
        return np.sqrt(mu)

    def evaluate(self, eta):
        """Return ``(mu, dmu/deta, d2mu/deta2)`` at ``eta``."""
        eta = np.asarray(eta, dtype=np.float64)
        if self.kind == "log":
            mu = np.exp(eta)
            d = mu
            dprime = mu
        else:
            if not np.all(eta > 0):
                raise DomainError(f"{self.kind} link needs a positive linear predictor")
            if self.kind == "identity":
                mu = eta.copy()
                d = np.ones_like(eta)
                dprime = np.zeros_like(eta)
            else:
                mu = eta * eta
                d = 2.0 * eta
                dprime = np.full_like(eta, 2.0)
        if not np.all(np.isfinite(mu)):
            raise DomainError("linear predictor gives a non-finite mean")
        return mu, d, dprime


@dataclass(frozen=True)
class DispersionTransform:
    kind: str = "identity"

    def __post_init__(self):
        if self.kind not in TRANSFORMS:
            raise ValueError(
                f"unknown dispersion transform {self.kind!r}; expected one of {TRANSFORMS}"
            )

    def phi(self, kappa: float) -> float:
        if not kappa > 0:
            raise DomainError("kappa must be positive")
        if self.kind == "identity":
            return float(kappa)
        if self.kind == "log":
            return float(np.log(kappa))
        if self.kind == "inverse":
            return 1.0 / kappa
        return float(np.sqrt(kappa))

    def evaluate(self, phi: float) -> tuple[float, float, float]:
        """Return ``(kappa, dkappa/dphi, d2kappa/dphi2)`` at ``phi``."""
        phi = float(phi)
        if self.kind == "identity":
            out = (phi, 1.0, 0.0)
        elif self.kind == "log":
            k = float(np.exp(phi))
            out = (k, k, k)
        elif self.kind == "inverse":
            if not phi > 0:
                raise DomainError("inverse dispersion transform needs phi > 0")
            out = (1.0 / phi, -1.0 / phi**2, 2.0 / phi**3)
        else:
            if not phi > 0:
                raise DomainError("sqrt dispersion transform needs phi > 0")
            out = (phi * phi, 2.0 * phi, 2.0)
        if not (np.isfinite(out[0]) and out[0] > 0):
            raise DomainError(f"phi={phi!r} maps to an inadmissible kappa={out[0]!r}")
        return out


def link_eval(link: LinkFunction, eta):
    return link.evaluate(eta)


def disp_eval(transform: DispersionTransform, phi: float):
    return transform.evaluate(phi)


def _as_link(link) -> LinkFunction:
    return link if isinstance(link, LinkFunction) else LinkFunction(link)


def _as_transform(transform) -> DispersionTransform:
    if isinstance(transform, DispersionTransform):
        return transform
    return DispersionTransform(transform)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Counts ``y``, design ``X``, prior weights ``m`` and the two reparameterizations."""

    y: np.ndarray
    X: np.ndarray
    m: np.ndarray | None = None
    link: LinkFunction = field(default_factory=LinkFunction)
    transform: DispersionTransform = field(default_factory=DispersionTransform)

    def __post_init__(self):
        y = np.asarray(self.y)
        if y.ndim != 1:
            raise ValueError("y must be a vector")
        if not np.all(np.isfinite(y)) or np.any(y < 0) or np.any(y != np.round(y)):
            raise ValueError("y must contain nonnegative integer counts")
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        n, p = X.shape
        if n != y.shape[0]:
            raise ValueError(f"X has {n} rows but y has {y.shape[0]} entries")
        if not 1 <= p <= n:
            raise ValueError(f"need n >= p >= 1, got n={n}, p={p}")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite values")
        m = np.ones(n) if self.m is None else np.asarray(self.m, dtype=np.float64)
        if m.shape != (n,) or not np.all(m > 0) or not np.all(np.isfinite(m)):
            raise ValueError("prior weights must be a positive vector of length n")
        X.setflags(write=False)
        m.setflags(write=False)
        yi = y.astype(np.int64)
        yi.setflags(write=False)
        object.__setattr__(self, "y", yi)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "link", _as_link(self.link))
        object.__setattr__(self, "transform", _as_transform(self.transform))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def with_transform(self, transform) -> "ModelSpec":
        return ModelSpec(self.y, self.X, self.m, self.link, _as_transform(transform))


@dataclass(frozen=True, eq=False)
class ParameterPoint:
    beta: np.ndarray
    phi: float

    def __post_init__(self):
        beta = np.array(self.beta, dtype=np.float64, ndmin=1)
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "phi", float(self.phi))

    def kappa(self, transform: DispersionTransform) -> float:
        return transform.evaluate(self.phi)[0]

    def as_vector(self) -> np.ndarray:
        return np.append(self.beta, self.phi)

    @classmethod
    def from_vector(cls, theta) -> "ParameterPoint":
        theta = np.asarray(theta, dtype=np.float64)
        return cls(theta[:-1], theta[-1])


def nb_log_pmf(y, mu, kappa):
    """Log probability of counts ``y`` under NB(mu, kappa).

    The gamma ratio is accumulated as sum_{j<y} log(1 + kappa j).
    """
    y_arr = np.atleast_1d(np.asarray(y, dtype=np.int64))
    mu_arr = np.broadcast_to(np.asarray(mu, dtype=np.float64), y_arr.shape)
    kappa = float(kappa)
    if not kappa > 0 or np.any(mu_arr <= 0):
        raise DomainError("nb_log_pmf needs mu > 0 and kappa > 0")
    lgr, _ = kernels.data_sums(y_arr, kappa)
    x = kappa * mu_arr
    out = lgr + y_arr * (np.log(mu_arr) - np.log1p(x)) - np.log1p(x) / kappa
    out = out - gammaln(y_arr + 1.0)
    if np.ndim(y) == 0 and np.ndim(mu) == 0:
        return float(out[0])
    return out


def linear_predictor(spec: ModelSpec, theta: ParameterPoint) -> np.ndarray:
    return spec.X @ theta.beta


def log_likelihood(spec: ModelSpec, theta: ParameterPoint) -> float:
    kappa = theta.kappa(spec.transform)
    mu, _, _ = spec.link.evaluate(linear_predictor(spec, theta))
    mu = np.maximum(mu, MU_FLOOR)
    return float(np.dot(spec.m, nb_log_pmf(spec.y, mu, kappa)))
