"""Exception types shared across the package.

The CLI maps ``ValidationError`` to exit code 2 and ``NumericalError`` to 3.
"""


class ThinarError(Exception):
    """Base class for package errors."""


class ValidationError(ThinarError, ValueError):
    """Inputs violate a structural contract (shapes, simplex, schema)."""


class DomainError(ThinarError, ValueError):
    """A numeric argument lies outside the domain of a function."""


class NumericalError(ThinarError, ArithmeticError):
    """A computation could not produce a usable number."""


class DegenerateSeriesError(NumericalError):
    """A series has zero variance so correlations are undefined."""


class NonStationaryError(DomainError):
    """Stationary moment formulas requested with phi >= 1."""


class InitializationError(NumericalError):
    """No finite starting point for a sampler could be found."""


class InternalConsistencyWarning(UserWarning):
    """Two routes to the same quantity disagree."""


class EstimationError(NumericalError):
    """A plug-in estimator hit a singular configuration (e.g. zero autocorrelation)."""
