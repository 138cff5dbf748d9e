"""One-step-ahead VaR and ES forecasting, forecast combination and backtesting."""

from .errors import (
    ConvergenceError,
    DegenerateSeriesError,
    DomainError,
    FittingError,
    InfeasibleError,
    InputError,
    InsufficientDataError,
    InvariantError,
    TailRiskError,
    UnsupportedLevelError,
)
from .records import RiskForecast
from .series import ReturnSeries

__all__ = [
    "ConvergenceError",
    "DegenerateSeriesError",
    "DomainError",
    "FittingError",
    "InfeasibleError",
    "InputError",
    "InsufficientDataError",
    "InvariantError",
    "ReturnSeries",
    "RiskForecast",
    "TailRiskError",
    "UnsupportedLevelError",
]
