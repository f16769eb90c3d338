"""Exception types shared across the package.

Each class maps to one of the error categories the public operations
document (invalid-argument, corrupt-input, io-error, spec-error,
numeric-error, state-error). The CLI assigns a distinct exit code per
category.
"""


class StscError(Exception):
    """Base class for all package errors."""


class InvalidArgument(StscError):
    """An argument violates a documented precondition."""


class CorruptInput(StscError):
    """Raw input data violates its declared format or bounds."""


class IOFailure(StscError):
    """A required file is missing or unreadable."""


class SpecError(StscError):
    """A network architecture string cannot be parsed or is inconsistent."""


class NumericError(StscError):
    """A computation produced non-finite values."""


class StateError(StscError):
    """An operation was invoked in an invalid order (e.g. backward before forward)."""
