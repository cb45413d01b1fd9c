"""
GPND — Error Types
Exception hierarchy shared by the library and the command line.
Each class carries the process exit code the CLI reports for it.
"""


class GpndError(Exception):
    """Base class for every error raised on purpose by this package."""

    exit_code = 1


class ConfigError(GpndError, ValueError):
    """Bad config key/value or bad command-line usage."""

    exit_code = 1


class DataError(GpndError, ValueError):
    """Input data is missing, malformed or violates a precondition."""

    exit_code = 2


class DimensionError(DataError):
    """Array shapes do not agree with a network or model."""


class ModelFormatError(DataError):
    """A persisted model or dataset file failed validation."""


class NumericError(GpndError, ArithmeticError):
    """A computation produced non-finite values."""

    exit_code = 3
