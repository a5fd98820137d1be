"""Exception types shared across the package."""


class DhnError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(DhnError, ValueError):
    """Input data violates a structural or physical invariant."""


class ParseError(ValidationError):
    """A file could not be parsed; the message carries file and line."""


class SolverError(DhnError, RuntimeError):
    """A linear solve failed or produced non-finite values."""
