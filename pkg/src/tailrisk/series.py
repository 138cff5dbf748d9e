"""Return series container, CSV ingestion, descriptive statistics and ADF screening."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateSeriesError, InputError, InsufficientDataError


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ReturnSeries:
    """Percentage log returns indexed by strictly increasing timestamps."""

    timestamps: np.ndarray
    returns: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps)
        r = np.asarray(self.returns, dtype=float)
        if ts.ndim != 1 or r.ndim != 1:
            raise InputError("timestamps and returns must be one-dimensional")
        if ts.shape != r.shape:
            raise InputError(
                f"length mismatch: {ts.size} timestamps vs {r.size} returns"
            )
        if not np.all(np.isfinite(r)):
            bad = int(np.flatnonzero(~np.isfinite(r))[0])
            raise InputError(f"non-finite return at index {bad}")
        if ts.size > 1 and not np.all(ts[1:] > ts[:-1]):
            bad = int(np.flatnonzero(~(ts[1:] > ts[:-1]))[0]) + 1
            raise InputError(f"timestamps not strictly increasing at index {bad}")
        object.__setattr__(self, "timestamps", _frozen(ts))
        object.__setattr__(self, "returns", _frozen(r))

    def __len__(self) -> int:
        return self.returns.size

    @classmethod
    def from_returns(cls, returns, start: int = 0) -> "ReturnSeries":
        """Wrap a bare return array using integer positions as timestamps."""
        r = np.asarray(returns, dtype=float)
        return cls(np.arange(start, start + r.size), r)

    def tail(self, n: int) -> "ReturnSeries":
        return ReturnSeries(self.timestamps[-n:], self.returns[-n:])


@dataclass(frozen=True)
class DescriptiveStats:
    count: int
    mean: float
    std: float
    min: float
    q25: float
    median: float
    q75: float
    max: float
    skewness: float
    kurtosis: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def log_returns(prices, timestamps=None) -> ReturnSeries:
    """Percentage log returns ``100 * ln(P_t / P_{t-1})``.

    When ``timestamps`` is given it must align with ``prices``; each return is
    stamped with the timestamp of its closing price.
    """
    p = np.asarray(prices, dtype=float)
    if p.ndim != 1 or p.size < 2:
        raise InsufficientDataError("need at least two prices")
    if not np.all(np.isfinite(p)) or np.any(p <= 0):
        bad = int(np.flatnonzero(~(np.isfinite(p) & (p > 0)))[0])
        raise InputError(f"price at index {bad} is not a positive finite number")
    r = 100.0 * np.diff(np.log(p))
    if timestamps is None:
        ts = np.arange(1, p.size)
    else:
        ts = np.asarray(timestamps)
        if ts.shape != p.shape:
            raise InputError("timestamps must align with prices")
        ts = ts[1:]
    return ReturnSeries(ts, r)


def describe(series: ReturnSeries | np.ndarray) -> DescriptiveStats:
    """Summary table: sample std (ddof=1), linear-interpolated quartiles,
    moment skewness and raw (non-excess) kurtosis."""
    x = np.asarray(getattr(series, "returns", series), dtype=float)
    if x.size < 4:
        raise InsufficientDataError("describe needs at least 4 observations")
    m = x.mean()
    dev = x - m
    m2 = np.mean(dev**2)
    if m2 <= 0.0 or np.ptp(x) == 0.0:
        raise DegenerateSeriesError("constant series: skewness/kurtosis undefined")
    q25, med, q75 = np.quantile(x, [0.25, 0.5, 0.75], method="linear")
    return DescriptiveStats(
        count=int(x.size),
        mean=float(m),
        std=float(x.std(ddof=1)),
        min=float(x.min()),
        q25=float(q25),
        median=float(med),
        q75=float(q75),
        max=float(x.max()),
        skewness=float(np.mean(dev**3) / m2**1.5),
        kurtosis=float(np.mean(dev**4) / m2**2),
    )


@dataclass(frozen=True)
class ADFResult:
    statistic: float
    p_value: float
    reject: bool
    used_lag: int = field(default=0)


def adf_test(series: ReturnSeries | np.ndarray, max_lag: int = 12) -> ADFResult:
    """Augmented Dickey-Fuller test with constant, AIC lag selection up to
    ``max_lag``; ``reject`` is True when the unit root is rejected at 5%."""
    from statsmodels.tsa.stattools import adfuller

    x = np.asarray(getattr(series, "returns", series), dtype=float)
    if max_lag < 0:
        raise InputError("max_lag must be non-negative")
    if x.size < max_lag + 10:
        raise InsufficientDataError(
            f"ADF with max_lag={max_lag} needs at least {max_lag + 10} observations"
        )
    if np.ptp(x) == 0.0:
        raise DegenerateSeriesError("ADF undefined on a constant series")
    stat, p, lag, *_ = adfuller(x, maxlag=max_lag, regression="c", autolag="AIC")
    p = min(max(float(p), 0.0), 1.0)
    return ADFResult(float(stat), p, p < 0.05, int(lag))


def read_series_csv(path: str | Path, strict: bool = False) -> ReturnSeries:
    """Read ``timestamp,price`` or ``timestamp,return`` delimited text.

    Timestamps are ISO-8601. Prices are converted with :func:`log_returns`.
    With ``strict`` the sampling interval must be constant.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        sample = fh.read(4096)
        fh.seek(0)
        try:
            dialect = csv.Sniffer().sniff(sample, delimiters=",;\t")
        except csv.Error:
            dialect = csv.excel
        reader = csv.reader(fh, dialect)
        header = [h.strip().lower() for h in next(reader, [])]
        if len(header) != 2 or header[0] != "timestamp" or header[1] not in ("price", "return"):
            raise InputError(
                f"{path}: header must be 'timestamp,price' or 'timestamp,return', got {header}"
            )
        ts, vals = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise InputError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            try:
                ts.append(np.datetime64(row[0].strip()))
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: bad timestamp {row[0]!r}") from exc
            try:
                v = float(row[1])
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: non-numeric value {row[1]!r}") from exc
            if not math.isfinite(v):
                raise InputError(f"{path}:{lineno}: non-finite value {row[1]!r}")
            vals.append(v)
    ts_arr = np.array(ts)
    if strict and ts_arr.size > 2:
        steps = np.diff(ts_arr)
        if np.any(steps != steps[0]):
            bad = int(np.flatnonzero(steps != steps[0])[0]) + 1
            raise InputError(f"{path}: irregular sampling at row {bad + 2}")
    if header[1] == "price":
        return log_returns(vals, ts_arr)
    return ReturnSeries(ts_arr, np.array(vals))


def write_series_csv(series: ReturnSeries, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "return"])
        for t, r in zip(series.timestamps, series.returns):
            w.writerow([str(t), repr(float(r))])

