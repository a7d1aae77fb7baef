"""Exception hierarchy shared across the package.

Two broad failure classes map onto the CLI exit codes: problems with the
inputs (files, config, shapes) raise DataError, numerical estimation
failures raise EstimationError.
"""

from __future__ import annotations


class EventSynthError(Exception):
    """Base class for all package-specific errors."""


class DataError(EventSynthError):
    """Invalid input data, file format, or configuration."""


class EstimationError(EventSynthError):
    """An estimation step failed (degenerate inputs, singular systems)."""


class DegenerateVarianceError(EstimationError):
    """A test statistic is undefined because the relevant variance is zero.

    The point estimate is still well defined and is carried on the
    exception so callers (grid builders, report emitters) can record it.
    """

    def __init__(self, message: str, estimate: float):
        super().__init__(message)
        self.estimate = float(estimate)
