"""Exception hierarchy shared by every module."""


class RNGDError(Exception):
    """Base class for all package errors."""


class InvalidInput(RNGDError, ValueError):
    """Malformed, non-finite or mis-shaped input."""


class SingularMetric(RNGDError, ArithmeticError):
    """A matrix expected to be positive definite is not (numerically)."""


class ExpDomain(RNGDError, ArithmeticError):
    """Exponential map evaluated outside its domain."""


class RetractFail(RNGDError, ArithmeticError):
    """Retraction could not be computed (singular solve)."""


class RadiusExceeded(RNGDError, ArithmeticError):
    """Inverse retraction or transport requested outside its radius."""


class RankCollapse(RNGDError, ArithmeticError):
    """A fixed-rank iterate lost rank."""


class BrokenInvariant(RNGDError, ArithmeticError):
    """An internal invariant (e.g. positive definiteness of the inverse Fisher) failed."""


class ParseError(RNGDError, ValueError):
    """Dataset file could not be parsed.

    Parameters
    ----------
    message : str
        Human readable description.
    line : int, optional
        1-based line number of the offending record.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(RNGDError, ValueError):
    """Unknown tag or invalid value in an experiment specification."""
