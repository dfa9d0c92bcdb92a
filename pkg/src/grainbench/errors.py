"""Exception hierarchy shared across the harness."""


class GrainbenchError(Exception):
    """Base class for all harness errors."""


class InvalidSpecError(GrainbenchError, ValueError):
    """A graph or kernel specification violates its invariants."""


class CalibrationError(GrainbenchError):
    """Kernel calibration could not be performed."""


class ClockResolutionError(CalibrationError):
    """The monotonic clock cannot resolve the requested target duration."""


class BackendError(GrainbenchError):
    """A backend could not execute the graph (bad config, worker failure)."""


class DeadlockError(BackendError):
    """A run exceeded its watchdog bound; dependency handling is suspect."""


class SweepError(GrainbenchError):
    """A grain sweep aborted part-way through.

    Carries the points that completed before the failure so callers can
    persist partial results.
    """

    def __init__(self, message, partial_points=None, cause=None):
        super().__init__(message)
        self.partial_points = list(partial_points or [])
        self.cause = cause


class MetgError(GrainbenchError, ValueError):
    """A METG computation was requested on an unusable curve."""
