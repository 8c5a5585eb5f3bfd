"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: config/usage problems exit 2, data and
protocol problems exit 3, numeric failures exit 4.
"""


class SeptError(Exception):
    """Base class for all package errors."""


class ShapeError(SeptError):
    """Array dimensions or lengths do not line up."""


class DomainError(SeptError):
    """A value is outside the mathematical domain of an operation."""


class InputError(SeptError):
    """A user-supplied string or template is malformed."""


class DataError(SeptError):
    """A dataset, neighbor set, or other on-disk artifact is invalid."""


class SchemaError(DataError):
    """JSON document failed schema validation; message carries pointer paths."""


class ConfigError(SeptError):
    """Configuration is inconsistent (hash mismatches, bad dimensions, ...)."""


class ProtocolError(SeptError):
    """An evaluation-protocol precondition was violated (splits, labels)."""


class UsageError(SeptError):
    """An operation was called with arguments it is not defined for."""


class NumericError(SeptError):
    """Non-finite values appeared where finite ones are required."""
