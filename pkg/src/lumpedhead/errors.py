"""Exception hierarchy shared by all modules.

Every error carries an ``exit_code`` so the command-line front end can map
failures to documented process exit statuses without a lookup table.
"""
from __future__ import annotations


class LumpedHeadError(Exception):
    """Base class for all package errors."""

    exit_code = 1

    def to_dict(self) -> dict:
        return {"error": type(self).__name__, "message": str(self)}


class ConfigError(LumpedHeadError):
    exit_code = 3


class TissueFormatError(LumpedHeadError):
    """Malformed tissue table (bad header, unparsable or non-monotonic rows)."""

    exit_code = 4


class TissueValidationError(LumpedHeadError):
    """Physically invalid tissue data (negative values, empty table)."""

    exit_code = 4


class DomainError(LumpedHeadError, ValueError):
    exit_code = 4


class GeometryError(LumpedHeadError, ValueError):
    exit_code = 4


class ParameterError(LumpedHeadError, ValueError):
    exit_code = 4


class DegenerateConductivityError(LumpedHeadError):
    """Series denominator cancelled to within rounding noise."""

    exit_code = 5


class TruncationError(LumpedHeadError):
    """Harmonic series did not converge before the degree cap."""

    exit_code = 5

    def __init__(self, message: str, partial_sum: complex, terms_used: int, residual: float):
        super().__init__(message)
        self.partial_sum = partial_sum
        self.terms_used = terms_used
        self.residual = residual


class SingularNetworkError(LumpedHeadError):
    exit_code = 5

    def __init__(self, message: str, node: str | None = None):
        super().__init__(message)
        self.node = node


class StateError(LumpedHeadError):
    exit_code = 5


class DegenerateReferenceError(LumpedHeadError, ValueError):
    exit_code = 5


class GridMismatchError(LumpedHeadError, ValueError):
    exit_code = 4


class SweepError(LumpedHeadError):
    """One or more points of a sweep failed; ``failures`` maps abscissa -> message."""

    exit_code = 5

    def __init__(self, message: str, failures: dict):
        super().__init__(message)
        self.failures = failures

    def to_dict(self) -> dict:
        d = super().to_dict()
        d["failures"] = {repr(k): v for k, v in self.failures.items()}
        return d


class CalibrationError(LumpedHeadError):
    exit_code = 6

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class FitError(LumpedHeadError, ValueError):
    exit_code = 6


class ExtrapolationError(LumpedHeadError, ValueError):
    exit_code = 6


class ExportError(LumpedHeadError):
    exit_code = 7


class ExtrapolationWarning(UserWarning):
    """Query fell outside a tabulated or fitted range and was clamped/extrapolated."""
