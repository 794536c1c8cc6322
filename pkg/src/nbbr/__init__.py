"""Negative binomial regression with maximum likelihood, explicit bias
correction, and mean or median bias-reducing adjusted score equations."""

from .errors import DomainError, NBError, RankError, SeriesTruncationError
from .fit import FitOptions, FitResult, ConvergenceReport, bias_correct, fit, wald_intervals
from .kernels import BACKEND
from .model import DispersionTransform, LinkFunction, ModelSpec, ParameterPoint, log_likelihood, nb_log_pmf
from .moments import SeriesControl, expectation_table, info_kappa

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConvergenceReport",
    "DispersionTransform",
    "DomainError",
    "FitOptions",
    "FitResult",
    "LinkFunction",
    "ModelSpec",
    "NBError",
    "ParameterPoint",
    "RankError",
    "SeriesControl",
    "SeriesTruncationError",
    "bias_correct",
    "expectation_table",
    "fit",
    "info_kappa",
    "log_likelihood",
    "nb_log_pmf",
    "wald_intervals",
]
