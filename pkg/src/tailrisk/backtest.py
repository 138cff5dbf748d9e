"""Coverage tests, loss functions and the model confidence set."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import DomainError, InputError

MCS_REPS = 1000
MCS_BLOCK = 10.0


def _aligned(*arrays) -> list[np.ndarray]:
    out = [np.asarray(a, dtype=float).ravel() for a in arrays]
    if any(a.size != out[0].size for a in out):
        raise InputError("sequences are not aligned")
    if out[0].size == 0:
        raise InputError("empty sequence")
    return out


def _xlogy(x: float, y: float) -> float:
    return 0.0 if x == 0 else x * math.log(y)


@dataclass(frozen=True)
class HitSequence:
    hits: np.ndarray
    alpha: float

    def __post_init__(self):
        h = np.asarray(self.hits)
        if h.ndim != 1 or not np.all((h == 0) | (h == 1)):
            raise InputError("hits must be a 0/1 sequence")
        if not 0 < self.alpha < 1:
            raise DomainError("alpha must lie in (0, 1)")
        h = h.astype(np.int8)
        h.flags.writeable = False
        object.__setattr__(self, "hits", h)

    @classmethod
    def from_forecasts(cls, returns, forecasts, alpha: float) -> "HitSequence":
        r, f = _aligned(returns, forecasts)
        return cls((r < f).astype(np.int8), alpha)

    @property
    def demeaned(self) -> np.ndarray:
        return self.hits - self.alpha

    @property
    def m(self) -> int:
        return int(self.hits.size)

    @property
    def n_violations(self) -> int:
        return int(self.hits.sum())


def violation_ratio(returns, forecasts, level: float) -> tuple[float, float]:
    r, f = _aligned(returns, forecasts)
    if not 0 < level < 1:
        raise DomainError("level must lie in (0, 1)")
    vrate = float(np.mean(r < f))
    return vrate, vrate / level


def uc_test(hits: HitSequence) -> tuple[float, float]:
    """Kupiec unconditional coverage likelihood ratio, chi2(1)."""
    m, N, a = hits.m, hits.n_violations, hits.alpha
    if m < 1:
        raise InputError("need at least one observation")
    p = N / m
    ll0 = _xlogy(m - N, 1 - a) + _xlogy(N, a)
    ll1 = _xlogy(m - N, 1 - p) + _xlogy(N, p)
    stat = -2.0 * (ll0 - ll1)
    stat = stat if stat > 0 else 0.0
    return stat, float(stats.chi2.sf(stat, 1))


def independence_stat(hits: HitSequence) -> float:
    """First-order Markov independence LR from transition counts."""
    h = hits.hits.astype(int)
    prev, cur = h[:-1], h[1:]
    n00 = int(np.sum((prev == 0) & (cur == 0)))
    n01 = int(np.sum((prev == 0) & (cur == 1)))
    n10 = int(np.sum((prev == 1) & (cur == 0)))
    n11 = int(np.sum((prev == 1) & (cur == 1)))
    pi01 = n01 / (n00 + n01) if n00 + n01 else 0.0
    pi11 = n11 / (n10 + n11) if n10 + n11 else 0.0
    pi = (n01 + n11) / (n00 + n01 + n10 + n11)
    ll_markov = (_xlogy(n00, 1 - pi01) + _xlogy(n01, pi01)
                 + _xlogy(n10, 1 - pi11) + _xlogy(n11, pi11))
    ll_iid = _xlogy(n00 + n10, 1 - pi) + _xlogy(n01 + n11, pi)
    stat = -2.0 * (ll_iid - ll_markov)
    return stat if stat > 0 else 0.0


def cc_test(hits: HitSequence) -> tuple[float, float]:
    """Christoffersen conditional coverage: UC plus independence, chi2(2)."""
    if hits.m < 2:
        raise InputError("conditional coverage needs at least two observations")
    stat = uc_test(hits)[0] + independence_stat(hits)
    return stat, float(stats.chi2.sf(stat, 2))


@dataclass(frozen=True)
class DQResult:
    stat: float
    p_value: float
    pseudo_inverse: bool


def dq_test(hits: HitSequence, forecasts, k: int = 4) -> DQResult:
    """Dynamic quantile test with ``k`` lagged hits and the forecast, chi2(k + 2).

    Lags before the first observation are taken as zero so all ``m`` rows
    enter the regression.
    """
    if k not in (1, 4):
        raise InputError("k must be 1 or 4")
    f = np.asarray(forecasts, dtype=float).ravel()
    m = hits.m
    if f.size != m:
        raise InputError("hits and forecasts are not aligned")
    if m < k + 10:
        raise InputError(f"DQ test needs at least {k + 10} observations")
    H = hits.demeaned
    cols = [np.ones(m)]
    for lag in range(1, k + 1):
        col = np.zeros(m)
        col[lag:] = H[:-lag]
        cols.append(col)
    cols.append(f)
    W = np.column_stack(cols)
    # least squares projection; minimum-norm solution when W is rank deficient
    coef, _, rank, _ = np.linalg.lstsq(W, H, rcond=None)
    singular = rank < W.shape[1]
    fitted = W @ coef
    a = hits.alpha
    stat = float(fitted @ fitted / (a * (1 - a)))
    stat = stat if stat > 0 else 0.0
    return DQResult(stat, float(stats.chi2.sf(stat, k + 2)), bool(singular))


def quantile_loss(returns, var_forecasts, alpha: float) -> float:
    r, v = _aligned(returns, var_forecasts)
    u = r - v
    return float(np.sum(u * (alpha - (u < 0))))


def al_log_score(returns, var_forecasts, es_forecasts, alpha: float) -> float:
    r, v, e = _aligned(returns, var_forecasts, es_forecasts)
    bad = np.flatnonzero(e >= 0)
    if bad.size:
        raise DomainError(f"ES forecast at index {bad[0]} is not negative ({e[bad[0]]})")
    hit = (r <= v).astype(float)
    s = -np.log((alpha - 1) / e) - (r - v) * (alpha - hit) / (alpha * e)
    return float(np.mean(s))


def al_log_score_series(returns, var_forecasts, es_forecasts, alpha: float) -> np.ndarray:
    r, v, e = _aligned(returns, var_forecasts, es_forecasts)
    if np.any(e >= 0):
        raise DomainError(f"ES forecast at index {int(np.flatnonzero(e >= 0)[0])} is not negative")
    hit = (r <= v).astype(float)
    return -np.log((alpha - 1) / e) - (r - v) * (alpha - hit) / (alpha * e)


# ---------------------------------------------------------------------------
# model confidence set


def stationary_bootstrap_indices(T: int, reps: int, mean_block: float,
                                 rng: np.random.Generator) -> np.ndarray:
    """Index matrix ``reps x T`` with geometric block lengths, wrapping at T."""
    p = 1.0 / mean_block
    idx = np.empty((reps, T), dtype=np.int64)
    idx[:, 0] = rng.integers(0, T, reps)
    jump = rng.random((reps, T)) < p
    fresh = rng.integers(0, T, (reps, T))
    for t in range(1, T):
        idx[:, t] = np.where(jump[:, t], fresh[:, t], (idx[:, t - 1] + 1) % T)
    return idx


@dataclass(frozen=True)
class MCSResult:
    included: frozenset
    p_values: dict
    elimination_order: tuple
    degenerate: bool = False


def _safe_t(num: np.ndarray, var: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num)
    pos = var > 0
    out[pos] = num[pos] / np.sqrt(var[pos])
    out[~pos & (num != 0)] = np.inf * np.sign(num[~pos & (num != 0)])
    return out


def mcs_elimination(losses, reps: int = MCS_REPS, mean_block: float = MCS_BLOCK,
                    seed: int = 0, model_ids=None) -> MCSResult:
    """Full elimination sequence with monotone p-values; see ``model_confidence_set``."""
    L = np.asarray(losses, dtype=float)
    if L.ndim != 2:
        raise InputError("losses must be a time x models matrix")
    T, M = L.shape
    if T < 100 or M < 2:
        raise InputError("MCS needs at least 100 observations and 2 models")
    ids = list(model_ids) if model_ids is not None else list(range(M))
    if len(ids) != M:
        raise InputError("model_ids length does not match the loss matrix")
    rng = np.random.default_rng(seed)
    idx = stationary_bootstrap_indices(T, reps, mean_block, rng)
    Lbar = L.mean(axis=0)
    Lboot = np.stack([L[idx[b]].mean(axis=0) for b in range(reps)])  # reps x M

    if np.all(np.ptp(L, axis=1) == 0):
        return MCSResult(frozenset(ids), {i: 1.0 for i in ids}, (), True)

    alive = list(range(M))
    order, pvals = [], {}
    running = 0.0
    while len(alive) > 1:
        a = np.array(alive)
        dij = Lbar[a][:, None] - Lbar[a][None, :]
        dij_b = Lboot[:, a][:, :, None] - Lboot[:, a][:, None, :]
        var_ij = np.mean((dij_b - dij) ** 2, axis=0)
        t_ij = _safe_t(dij, var_ij)
        stat = float(np.max(np.abs(t_ij)))
        if stat == 0.0:
            break
        with np.errstate(divide="ignore", invalid="ignore"):
            boot = np.where(var_ij > 0, np.abs(dij_b - dij) / np.sqrt(np.where(var_ij > 0, var_ij, 1)), 0.0)
        boot_stat = boot.reshape(reps, -1).max(axis=1)
        p = float(np.mean(boot_stat >= stat))
        running = max(running, p)

        di = Lbar[a] - Lbar[a].mean()
        di_b = Lboot[:, a] - Lboot[:, a].mean(axis=1, keepdims=True)
        var_i = np.mean((di_b - di) ** 2, axis=0)
        t_i = _safe_t(di, var_i)
        worst = np.flatnonzero(t_i == t_i.max())
        if worst.size == a.size:
            break
        for w in worst:
            pvals[ids[a[w]]] = running
            order.append(ids[a[w]])
        alive = [j for j in alive if j not in set(a[worst])]
    for j in alive:
        pvals[ids[j]] = 1.0
    return MCSResult(frozenset(ids[j] for j in alive), pvals, tuple(order))


def model_confidence_set(losses, confidence: float = 0.75, bootstrap_reps: int = MCS_REPS,
                         block_length_mean: float = MCS_BLOCK, seed: int = 0, model_ids=None):
    """Models not rejected at ``confidence``; returns ``(included, p_values, result)``.

    A model is kept when its elimination p-value is at least ``1 - confidence``,
    so the 75% set is always contained in the 90% set.
    """
    if not 0 < confidence < 1:
        raise DomainError("confidence must lie in (0, 1)")
    res = mcs_elimination(losses, bootstrap_reps, block_length_mean, seed, model_ids)
    keep = frozenset(i for i, p in res.p_values.items() if p >= 1 - confidence)
    return keep, res.p_values, res


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class BacktestReport:
    model_id: str
    alpha: float
    vrate: float
    vratio: float
    uc_stat: float
    uc_p: float
    cc_stat: float
    cc_p: float
    dq1_stat: float
    dq1_p: float
    dq4_stat: float
    dq4_p: float
    qlf: float
    al_score: float
    es_level: float = math.nan
    es_vrate: float = math.nan
    es_vratio: float = math.nan
    es_dq4_stat: float = math.nan
    es_dq4_p: float = math.nan
    es_qlf: float = math.nan
    mcs75: bool | None = None
    mcs90: bool | None = None
    mcs_p: float = math.nan

    def __post_init__(self):
        if not 0 <= self.vrate <= 1:
            raise InputError("vrate outside [0, 1]")
        for f in fields(self):
            if f.name.endswith("_p") and not math.isnan(getattr(self, f.name)):
                if not 0 <= getattr(self, f.name) <= 1:
                    raise InputError(f"{f.name} outside [0, 1]")

    def as_dict(self) -> dict:
        return asdict(self)


def backtest_model(model_id: str, returns, var, es, alpha: float,
                   es_level: float | None = None) -> BacktestReport:
    """Full VaR battery plus, when ``es_level`` is given, ES-as-quantile checks."""
    r, v, e = _aligned(returns, var, es)
    hits = HitSequence.from_forecasts(r, v, alpha)
    vrate, vratio = violation_ratio(r, v, alpha)
    uc = uc_test(hits)
    cc = cc_test(hits)
    dq1 = dq_test(hits, v, 1)
    dq4 = dq_test(hits, v, 4)
    extra = {}
    if es_level is not None:
        eh = HitSequence.from_forecasts(r, e, es_level)
        erate, eratio = violation_ratio(r, e, es_level)
        edq = dq_test(eh, e, 4)
        extra = dict(es_level=es_level, es_vrate=erate, es_vratio=eratio,
                     es_dq4_stat=edq.stat, es_dq4_p=edq.p_value,
                     es_qlf=quantile_loss(r, e, es_level))
    return BacktestReport(model_id, alpha, vrate, vratio, uc[0], uc[1], cc[0], cc[1],
                          dq1.stat, dq1.p_value, dq4.stat, dq4.p_value,
                          quantile_loss(r, v, alpha), al_log_score(r, v, e, alpha), **extra)


def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def write_reports_json(reports, path: str | Path) -> None:
    data = [{k: _clean(v) for k, v in rep.as_dict().items()} for rep in reports]
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def write_reports_csv(reports, path: str | Path) -> None:
    reports = list(reports)
    names = [f.name for f in fields(BacktestReport)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for rep in reports:
            w.writerow(["" if v is None else v for v in (getattr(rep, n) for n in names)])
