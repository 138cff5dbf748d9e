"""Small record types passed between modules."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any


@dataclass(frozen=True)
class RiskForecast:
    """One-step-ahead (VaR, ES) pair in percent; both negative for lower tails."""

    var: float
    es: float
    alpha: float
    timestamp: Any = None
    model_id: str | None = None
    flag: str | None = None
