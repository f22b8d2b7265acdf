"""Exception types shared across the package."""


class MudError(Exception):
    """Base class for package errors."""


class DataError(MudError, ValueError):
    """Bad input data: unreadable files, malformed rows, impossible queries."""


class LoadError(DataError):
    pass


class InsufficientHeadsError(DataError):
    def __init__(self, message="insufficient heads for k"):
        super().__init__(message)


class NumericalError(MudError, ArithmeticError):
    """Raised when training produces a non-finite loss."""
