"""Exception types shared across the package."""


class LossTomoError(Exception):
    """Base class for all package errors."""


class TreeSpecError(LossTomoError, ValueError):
    """Malformed or invalid tree-spec document or topology."""

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class CapacityError(LossTomoError):
    """An exponential enumeration was requested above its configured cap."""


class SingularityError(LossTomoError, ArithmeticError):
    """A Fisher-information or variance formula was evaluated at a singular point."""
