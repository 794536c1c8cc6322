"""Exception types raised by the fitting engine."""


class NBError(Exception):
    """Base class for nbbr errors."""


class DomainError(NBError, ValueError):
    """A linear predictor or dispersion value outside its admissible range."""


class RankError(NBError, ValueError):
    """The (weighted) design matrix is not of full column rank."""


class SeriesTruncationError(NBError, ArithmeticError):
    """An infinite series did not settle within the allowed number of terms."""
