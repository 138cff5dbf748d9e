"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class TailRiskError(Exception):
    """Base class for every error raised by the package."""


class InputError(TailRiskError, ValueError):
    """Rejected input: wrong sign, non-finite, malformed rows."""


class InsufficientDataError(TailRiskError, ValueError):
    """Not enough observations for the requested operation."""


class DegenerateSeriesError(TailRiskError, ValueError):
    """Series with zero dispersion where dispersion is required."""


class DomainError(TailRiskError, ValueError):
    """Argument outside the mathematical domain of a formula."""


class UnsupportedLevelError(TailRiskError, KeyError):
    """No tabulated constant for the requested key."""


class ConvergenceError(TailRiskError, RuntimeError):
    """Numerical root finding or optimisation failed.

    ``state`` carries whatever partial information is useful to the caller
    (bracket endpoints, best parameters so far, ...).
    """

    def __init__(self, message: str, state: dict | None = None):
        super().__init__(message)
        self.state = state or {}


class FittingError(ConvergenceError):
    """Model estimation failed; ``state['best']`` holds best-so-far params."""


class InfeasibleError(FittingError):
    """No feasible parameter point was found."""


class InvariantError(TailRiskError, AssertionError):
    """An internal invariant that should be impossible to break was broken."""
