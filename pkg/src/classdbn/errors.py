"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ``DataError`` -> 2, ``NumericError`` -> 3.
"""


class ClassDbnError(Exception):
    """Base class for all package errors."""


class DataError(ClassDbnError, ValueError):
    """Input data is malformed or unusable for the requested operation."""


class SchemaError(DataError):
    """A feature or column does not match the schema."""


class ConfigError(ClassDbnError, ValueError):
    """Pipeline configuration is incomplete or contradictory."""


class NumericError(ClassDbnError, ArithmeticError):
    """A numeric procedure failed (divergence, non-finite values)."""


class ForecastDivergenceError(NumericError):
    """A forecast produced non-finite values."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"forecast diverged at step {step}")


class StageError(ClassDbnError):
    """A pipeline stage failed; wraps the original cause."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
