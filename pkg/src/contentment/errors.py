"""Exception types raised by the simulator."""

from __future__ import annotations


class ContentmentError(Exception):
    """Base class for all simulator errors."""


class InvalidParametersError(ContentmentError, ValueError):
    pass


class DegenerateFieldError(ContentmentError):
    """The density has (numerically) zero mass or zero spread."""


class NotNormalizedError(ContentmentError):
    pass


class CalibrationError(ContentmentError):
    """Redistribution calibration failed.

    ``kind`` is ``"no-convergence"`` or ``"infeasible"``; the residuals of the
    two constraints at the last iterate are kept for diagnostics.
    """

    def __init__(self, kind: str, message: str, residual_a: float = float("nan"),
                 residual_b: float = float("nan"), state: dict | None = None):
        super().__init__(f"{kind}: {message} (residual_a={residual_a:.3e}, "
                         f"residual_b={residual_b:.3e})")
        self.kind = kind
        self.residual_a = residual_a
        self.residual_b = residual_b
        self.state = state or {}


class MalformedRatesError(ContentmentError):
    pass


class SingularSystemError(ContentmentError):
    pass


class MassAnomalyError(ContentmentError):
    pass


class IncompatibleRunsError(ContentmentError):
    pass


class EmptyFieldError(ContentmentError):
    pass


class BlowupError(ContentmentError):
    pass


class MismatchedConfigError(ContentmentError):
    pass
