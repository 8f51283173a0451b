"""Exception types shared across the package."""

from __future__ import annotations


class AbxError(Exception):
    """Base class for every error raised by abx."""


class ConfigError(AbxError, ValueError):
    """Invalid experiment or command configuration."""


class TaxonomyError(AbxError, ValueError):
    """Malformed taxonomy file or invariant violation."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyDataError(AbxError, ValueError):
    """An operation received no usable rows."""


class DomainError(AbxError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class LogParseError(AbxError, ValueError):
    """Base class for web-log parsing failures."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class LogSyntaxError(LogParseError):
    """The line is not a valid JSON object."""


class UnknownKindError(LogParseError):
    """The record's ``kind`` is not render, pixel or click."""


class MissingFieldError(LogParseError):
    """A required top-level field or query parameter is absent or invalid."""


class QueryStringError(AbxError, ValueError):
    """Malformed percent escape in a query string."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"offset {offset}: {message}")


class ModelError(AbxError):
    """Base class for numerical / model-fitting failures."""


class RankDeficientError(ModelError, ValueError):
    """Design matrix is not of full column rank."""

    def __init__(self, columns, rank: int, k: int):
        self.columns = tuple(columns)
        self.rank = rank
        self.k = k
        super().__init__(
            f"design has rank {rank} < {k} columns; linearly dependent: "
            + ", ".join(self.columns)
        )


class ConvergenceError(ModelError, RuntimeError):
    """IRLS did not converge; ``last`` holds the final coefficient iterate."""

    def __init__(self, message: str, last=None, iterations: int = 0):
        self.last = last
        self.iterations = iterations
        super().__init__(message)


class CalibrationError(AbxError, RuntimeError):
    """Reassignment calibration could not reach the target bands."""

    def __init__(self, message: str, achieved: tuple[float, float]):
        self.achieved = achieved
        super().__init__(f"{message} (achieved users={achieved[0]:.4f}, sessions={achieved[1]:.4f})")


class PreconditionError(AbxError, ValueError):
    """Input is well-formed but cannot support the requested model."""
