"""Exception types shared across the package."""


class NlsLabError(Exception):
    """Base class for all package errors."""


class InvalidDimensionError(NlsLabError):
    """Spatial dimension below 3 is not supported."""


class InsufficientResolutionError(NlsLabError):
    """Fewer radial nodes than the minimum (16)."""


class GridMismatchError(NlsLabError):
    """Fields living on different grids were combined."""


class RadiusOutOfRangeError(NlsLabError):
    """Tail radius outside [0, rmax)."""


class UnsupportedExponentError(NlsLabError):
    """Lebesgue/Sobolev exponent outside the supported range."""


class SingularResolventError(NlsLabError):
    """Resolvent at E >= 0 requested without regularization."""


class TruncationNotConvergedError(NlsLabError):
    """Doubling the time horizon moved the result more than the tolerance."""


class DomainEscapeError(NlsLabError):
    """Field mass reached the grid boundary; decay fit untrustworthy."""


class StepTooLargeError(NlsLabError):
    """Time step above the stability cap."""


class NanDetectedError(NlsLabError):
    """NaN/Inf appeared during integration."""


class FixedPointNotConvergedError(NlsLabError):
    """Nonlinear solve inside the oracle integrator stalled."""


class NotConvergedError(NlsLabError):
    """Iteration cap reached before the requested tolerance."""


class CollapsedToZeroError(NlsLabError):
    """Fixed-point iteration reached the trivial zero solution."""


class NoSolutionError(NlsLabError):
    """Exponent constraints have no solution for these parameters."""


class UndersampledIntervalError(NlsLabError):
    """Too few trajectory samples on the requested interval."""


class ConfigError(NlsLabError):
    """Invalid scenario configuration; carries the offending field name."""

    def __init__(self, field, reason):
        self.field = field
        self.reason = reason
        super().__init__(f"config field '{field}': {reason}")


class MissingRunError(NlsLabError):
    """Report requested for a run directory that does not exist."""
