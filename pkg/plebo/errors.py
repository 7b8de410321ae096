"""
Exception hierarchy for plebo.

Every error raised deliberately by the library derives from ``PleboError`` so
callers (the CLI in particular) can separate expected failures from bugs.
"""

from typing import Optional


class PleboError(Exception):
    """Base exception for plebo errors."""
    pass


class NotPositiveDefinite(PleboError):
    """Raised when a matrix cannot be factorised at any jitter level."""
    pass


class DimensionMismatch(PleboError):
    """Raised when operand shapes do not agree."""
    pass


class LikelihoodUndefined(PleboError):
    """Raised when the GP marginal likelihood cannot be evaluated."""
    pass


class FitFailed(PleboError):
    """Raised when every hyperparameter optimisation restart failed."""
    pass


class DomainError(PleboError):
    """Raised when an argument lies outside a function's domain."""
    pass


class InferenceFailed(PleboError):
    """Raised when MCMC leaves too few usable draws."""
    pass


class AllWeightsZero(PleboError):
    """Raised when no hyperparameter candidate has a defined likelihood."""
    pass


class NoUnobservedPoints(PleboError):
    """Raised when a strategy is asked to propose on an exhausted grid."""
    pass


class ConfigError(PleboError):
    """Raised for missing or inconsistent configuration."""
    pass


class ParseError(PleboError):
    """Raised when an input file is malformed."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        location = ""
        if line is not None:
            location = f" (line {line}" + (f", column {column})" if column is not None else ")")
        super().__init__(f"{message}{location}")


class EmptyTask(PleboError):
    """Raised when a grid task has no usable cells."""
    pass


class DegenerateTask(PleboError):
    """Raised when a task cannot be standardised."""
    pass


class MetricUndefined(PleboError):
    """Raised when the normalised metric has no meaning for a task."""
    pass


class LengthMismatch(PleboError):
    """Raised when traces to be aggregated differ in length."""
    pass


class TaskSetMismatch(PleboError):
    """Raised when paired comparisons do not cover the same tasks."""
    pass
