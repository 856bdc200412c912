"""Exception types shared across the package.

The CLI maps these onto process exit codes (see ``satrank.cli``).
"""


class SatrankError(Exception):
    """Base class for all package errors."""


class ConfigError(SatrankError):
    """Bad configuration or command-line usage."""


class DataError(SatrankError):
    """Malformed, missing, or inconsistent input data."""


class ShapeError(SatrankError, ValueError):
    """Operand shapes are incompatible for a primitive."""


class NumericError(SatrankError, FloatingPointError):
    """A computation produced NaN or Inf."""
