"""Exception hierarchy shared by every module."""


class ModdevError(Exception):
    """Base class for all package errors."""


class ModelError(ModdevError, ValueError):
    """An invalid distribution, model or specification."""


class DegenerateRate(ModdevError, ArithmeticError):
    """A rate whose variance denominator vanishes."""


class NoRootInBox(ModdevError):
    """The estimating equation has no root inside the search box."""


class QuadratureError(ModdevError, ArithmeticError):
    """Adaptive quadrature failed to reach the requested tolerance."""


class DomainViolation(ModdevError, ValueError):
    """A map was evaluated outside its domain of differentiability."""


class GridMismatch(ModdevError, ValueError):
    """A direction was not sampled on the operator's grid."""


class InsufficientHits(ModdevError):
    """Too few grid points with enough tail hits to fit a decay slope.

    The partially filled report is available as ``self.report``.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConfigError(ModdevError, ValueError):
    """Invalid experiment configuration."""
