"""Exception types shared across the package."""


class TeganError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(TeganError):
    """Shapes or vector lengths do not line up."""


class NumericError(TeganError):
    """Non-finite values where finite ones are required."""


class ConfigError(TeganError):
    """Invalid configuration value or file."""


class DataError(TeganError):
    """Dataset is empty, degenerate, or otherwise unusable."""


class AttrFileError(TeganError):
    """Malformed attribute annotation file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class StateError(TeganError):
    """Object is in the wrong lifecycle state for the requested call."""


class DivergenceError(TeganError):
    """Training produced a non-finite loss."""

    def __init__(self, message, breakdown=None):
        super().__init__(message)
        self.breakdown = breakdown
