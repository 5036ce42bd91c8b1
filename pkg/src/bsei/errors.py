"""Exception types shared across the package."""

from __future__ import annotations


class BseiError(Exception):
    """Base class for all package-specific failures."""


class ProjectionError(BseiError):
    """Nearest-point search did not certify optimality within the iteration cap.

    Carries the best iterate found so the caller can decide whether to accept it.
    """

    def __init__(self, message: str, best_point=None, gap: float | None = None):
        super().__init__(message)
        self.best_point = best_point
        self.gap = gap


class AdaptednessError(BseiError):
    """A process ensemble violated its declared adaptedness contract."""


class RegressionError(BseiError):
    """A conditional-expectation regression failed; records the grid index."""

    def __init__(self, message: str, time_index: int | None = None):
        super().__init__(message)
        self.time_index = time_index


class NonConvergenceError(BseiError):
    """Fixed-point iteration hit the iteration cap above tolerance.

    The partial report accumulated so far is attached for diagnosis.
    """

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class ConfigError(ValueError):
    """Invalid run configuration; ``field`` names the offending entry."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field
