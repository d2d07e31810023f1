"""Exception hierarchy shared across the package.

Each class maps to one CLI exit code (see :mod:`posediff.cli`).
"""


class PosediffError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(PosediffError, ValueError):
    """Invalid configuration or hyperparameter value."""

    exit_code = 1


class DomainError(PosediffError, ValueError):
    """Argument outside the mathematical domain of an operation."""

    exit_code = 1


class ShapeError(PosediffError, ValueError):
    """Array shapes do not agree."""

    exit_code = 2


class ParseError(PosediffError, ValueError):
    """Malformed record in an input file."""

    exit_code = 2

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class SchemaError(PosediffError, ValueError):
    """Data does not match the declared schema (joint count, strategy, ...)."""

    exit_code = 2


class ProtocolError(PosediffError):
    """One-class protocol violated: anomalous data reached training."""

    exit_code = 2


class CheckpointVersionError(SchemaError):
    """Checkpoint written by an incompatible format version."""


class UndefinedMetricError(PosediffError, ValueError):
    """Metric is undefined for the given input (e.g. one class only)."""

    exit_code = 2


class NumericError(PosediffError, FloatingPointError):
    """Non-finite value produced during a numerical computation."""

    exit_code = 3
