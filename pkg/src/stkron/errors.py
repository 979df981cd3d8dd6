"""Exception hierarchy mapped onto CLI exit codes."""


class StkronError(Exception):
    """Base class for all package errors."""


class UsageError(StkronError):
    """Invalid arguments or configuration (exit code 2)."""


class DataError(StkronError):
    """Malformed or degenerate input data (exit code 3)."""


class NumericalError(StkronError):
    """Numerical failure during computation (exit code 4)."""


class ConditioningError(NumericalError):
    """A matrix required to be positive definite was not, even after jitter."""

    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue
