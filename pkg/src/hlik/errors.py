"""Exception hierarchy."""


class HlikError(Exception):
    """Base class for package errors."""


class DomainError(HlikError):
    """Invalid parameter values or mismatched dimensions."""


class DataError(HlikError):
    """Malformed input data (carries a line number when parsing files)."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericalError(HlikError):
    """Non-finite or unstable numerical result."""


class NotConvergedError(HlikError):
    """An iterative solver failed to converge."""


class UnsupportedOperationError(HlikError):
    """Operation not available for this model configuration."""


class PlanError(HlikError):
    """Invalid experiment plan; message lists all problems found."""
