"""Forecast combiners: average, median, joint AL-score weights, quantile LASSO."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, sparse

from . import _kernels as K
from ._simplex import simplex_search
from .errors import FittingError, InfeasibleError, InputError
from .records import RiskForecast

CROSSING_PENALTY = 1e6
SIMPLEX_TOL = 1e-8
LASSO_GRID = (0.0, 0.01, 0.1, 1.0, 10.0)


def _nonempty(forecasts) -> np.ndarray:
    x = np.asarray(forecasts, dtype=float).ravel()
    if x.size == 0:
        raise InputError("no forecasts to combine")
    return x


def combine_simple_average(forecasts) -> float:
    return float(np.mean(_nonempty(forecasts)))


def combine_median(forecasts) -> float:
    # np.median takes the midpoint for an even count
    return float(np.median(_nonempty(forecasts)))


# ---------------------------------------------------------------------------
# joint AL-score combination


@dataclass(frozen=True)
class CombinationWeights:
    beta: np.ndarray
    gamma: np.ndarray
    window_id: int = 0
    score: float = math.nan
    flag: str | None = None

    def __post_init__(self):
        for name in ("beta", "gamma"):
            w = np.asarray(getattr(self, name), dtype=float)
            if w.ndim != 1 or w.size == 0:
                raise InputError(f"{name} must be a nonempty vector")
            if np.any(w < 0) or abs(w.sum() - 1.0) > SIMPLEX_TOL:
                raise InputError(f"{name} is not on the simplex: {w}")
            w = w.copy()
            w.flags.writeable = False
            object.__setattr__(self, name, w)


def equal_weights(n: int, h: int, window_id: int = 0, flag: str | None = None):
    return CombinationWeights(np.full(n, 1.0 / n), np.full(h, 1.0 / h), window_id, flag=flag)


def combination_score(beta, gamma, panel_var, panel_es, realized, alpha: float) -> float:
    """Mean AL score of the combined pair (``inf`` if any combined ES >= 0)."""
    f = K.combo_score(np.asarray(beta, dtype=float), np.asarray(gamma, dtype=float),
                      np.ascontiguousarray(panel_var, dtype=float),
                      np.ascontiguousarray(panel_es, dtype=float),
                      np.ascontiguousarray(realized, dtype=float), alpha, 0.0)
    return math.inf if f >= K.BIG else float(f)


def crossing_margin(beta, gamma, panel_var, panel_es) -> float:
    """Smallest ``VaR - ES`` of the combined pair over the window."""
    return float(np.min(panel_var @ beta - panel_es @ gamma))


def _feasible_anchor(V: np.ndarray, E: np.ndarray):
    """LP for weights maximising the worst-case gap ``V beta - E gamma``."""
    T, n = V.shape
    h = E.shape[1]
    # variables: beta (n), gamma (h), s; maximise s
    c = np.zeros(n + h + 1)
    c[-1] = -1.0
    A_ub = np.hstack([-V, E, np.ones((T, 1))])
    b_ub = np.zeros(T)
    A_eq = np.zeros((2, n + h + 1))
    A_eq[0, :n] = 1.0
    A_eq[1, n:n + h] = 1.0
    bounds = [(0, None)] * (n + h) + [(None, None)]
    res = optimize.linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0, 1.0], bounds=bounds,
                           method="highs")
    if res.status != 0:
        return None
    x = np.clip(res.x, 0.0, None)
    b, g = x[:n] / x[:n].sum(), x[n:n + h] / x[n:n + h].sum()
    return b, g


def _candidates(n: int, h: int):
    """Equal weights and every single-model (one-hot) pair."""
    yield np.full(n, 1.0 / n), np.full(h, 1.0 / h)
    eye_n, eye_h = np.eye(n), np.eye(h)
    for i in range(n):
        for j in range(h):
            yield eye_n[i], eye_h[j]


def _logits(w: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(w, 1e-12))


def fit_joint_combination(panel_var, panel_es, realized, alpha: float, *, window_id: int = 0,
                          warm_start: CombinationWeights | None = None, seed: int = 0,
                          n_starts: int = 5, max_evals: int = 10_000) -> CombinationWeights:
    """Simplex weights minimising the mean AL score of the combined (VaR, ES).

    The combined ES may not exceed the combined VaR at any time in the window.
    Weights are parametrised by softmax logits and crossing is penalised;
    equal weights and single-model weights are scored exactly and kept if
    they beat the search, so the result never does worse than any of them.
    """
    V = np.ascontiguousarray(panel_var, dtype=float)
    E = np.ascontiguousarray(panel_es, dtype=float)
    r = np.ascontiguousarray(realized, dtype=float)
    if V.ndim != 2 or E.ndim != 2 or V.shape[0] != r.size or E.shape[0] != r.size:
        raise InputError("panels and realized returns are not aligned")
    if np.any(E >= 0):
        raise InputError("individual ES forecasts must be negative")
    T, n = V.shape
    h = E.shape[1]

    best = None  # (score, beta, gamma)

    def consider(b, g):
        nonlocal best
        if crossing_margin(b, g, V, E) < 0:
            return
        s = combination_score(b, g, V, E, r, alpha)
        if math.isfinite(s) and (best is None or s < best[0]):
            best = (s, b, g)

    for b, g in _candidates(n, h):
        consider(b, g)
    anchor = None
    if best is None:
        anchor = _feasible_anchor(V, E)
        if anchor is None or crossing_margin(*anchor, V, E) < 0:
            raise InfeasibleError("no simplex weights avoid crossing on this window",
                                  state={"window_id": window_id})
        consider(*anchor)
        if best is None:
            raise InfeasibleError("feasible weights give an undefined score",
                                  state={"window_id": window_id})
    if n == 1 and h == 1:
        return CombinationWeights(np.ones(1), np.ones(1), window_id, best[0])

    M = np.hstack([V, E])
    fpar = (alpha, CROSSING_PENALTY)
    ipar = (n, h)
    rng = np.random.default_rng(seed)
    if warm_start is not None and warm_start.beta.size == n and warm_start.gamma.size == h:
        starts = [np.concatenate([_logits(warm_start.beta), _logits(warm_start.gamma)])]
    else:
        starts = [np.zeros(n + h), np.concatenate([_logits(best[1]), _logits(best[2])])]
        while len(starts) < n_starts:
            starts.append(rng.normal(0.0, 1.0, n + h))
    for x0 in starts:
        x, f, _ = simplex_search(3, x0, r, M=M, fpar=fpar, ipar=ipar,
                                 step=np.full(n + h, 0.5), max_evals=max_evals)
        if f >= K.BIG:
            continue
        b, g = K.softmax(x[:n]), K.softmax(x[n:])
        if crossing_margin(b, g, V, E) < 0:
            b, g = _repair(b, g, best[1], best[2], V, E)
        consider(b, g)
    s, b, g = best
    return CombinationWeights(b, g, window_id, s)


def _repair(b, g, b_ok, g_ok, V, E, iters: int = 60):
    """Move toward a feasible point until crossing disappears (bisection)."""
    lo, hi = 0.0, 1.0  # weight on the infeasible point
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if crossing_margin(mid * b + (1 - mid) * b_ok, mid * g + (1 - mid) * g_ok, V, E) >= 0:
            lo = mid
        else:
            hi = mid
    return lo * b + (1 - lo) * b_ok, lo * g + (1 - lo) * g_ok


def combined_forecast(weights: CombinationWeights, var_row, es_row, alpha: float = 0.05,
                      **meta) -> RiskForecast:
    v = np.asarray(var_row, dtype=float)
    e = np.asarray(es_row, dtype=float)
    if v.shape != weights.beta.shape or e.shape != weights.gamma.shape:
        raise InputError(f"expected {weights.beta.size} VaR and {weights.gamma.size} ES "
                         f"forecasts, got {v.size} and {e.size}")
    var = float(weights.beta @ v)
    es = float(weights.gamma @ e)
    flag = meta.pop("flag", None)
    if not es < var:
        es = var - 1e-8
        flag = "es clamped below var"
    return RiskForecast(var, es, alpha, flag=flag, **meta)


# ---------------------------------------------------------------------------
# quantile LASSO


@dataclass(frozen=True)
class LassoComboSpec:
    intercept: float
    coefficients: np.ndarray = field(repr=True)
    lam: float
    tau: float

    def __post_init__(self):
        if self.lam < 0:
            raise InputError("lambda must be nonnegative")
        if not 0 < self.tau < 1:
            raise InputError("tau must lie in (0, 1)")

    def predict(self, predictors) -> np.ndarray:
        return self.intercept + np.asarray(predictors, dtype=float) @ self.coefficients


def fit_quantile_lasso(predictors, response, tau: float, lam: float) -> LassoComboSpec:
    """L1-penalised quantile regression solved as a linear program.

    Variables are the intercept, split slopes ``b+ - b-`` and split residuals
    ``u+ - u-``; the intercept is not penalised.
    """
    X = np.asarray(predictors, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(response, dtype=float)
    T, p = X.shape
    if y.size != T:
        raise InputError("predictors and response are not aligned")
    if T < 10 * p:
        raise InputError(f"need at least {10 * p} observations for {p} predictors")
    if lam < 0:
        raise InputError("lambda must be nonnegative")
    # x = [b0+, b0-, b+ (p), b- (p), u+ (T), u- (T)]
    c = np.concatenate([[0.0, 0.0], np.full(p, lam), np.full(p, lam),
                        np.full(T, tau), np.full(T, 1.0 - tau)])
    ones = np.ones((T, 1))
    A_eq = sparse.hstack([sparse.csr_matrix(ones), sparse.csr_matrix(-ones),
                          sparse.csr_matrix(X), sparse.csr_matrix(-X),
                          sparse.identity(T), -sparse.identity(T)], format="csr")
    res = optimize.linprog(c, A_eq=A_eq, b_eq=y, bounds=(0, None), method="highs")
    if res.status != 0:
        raise FittingError(f"quantile LASSO did not converge: {res.message}",
                           state={"status": res.status})
    z = res.x
    coef = z[2:2 + p] - z[2 + p:2 + 2 * p]
    return LassoComboSpec(float(z[0] - z[1]), coef, float(lam), float(tau))


def _mean_qloss(y, q, tau):
    u = y - q
    return float(np.mean(u * (tau - (u < 0))))


def select_lasso_lambda(predictors, response, tau: float, grid=LASSO_GRID,
                        holdout: float = 0.25) -> float:
    """Grid value with the lowest held-out quantile loss (last ``holdout`` share)."""
    X = np.asarray(predictors, dtype=float)
    y = np.asarray(response, dtype=float)
    cut = int(round(y.size * (1 - holdout)))
    best_lam, best_loss = None, math.inf
    for lam in grid:
        spec = fit_quantile_lasso(X[:cut], y[:cut], tau, lam)
        loss = _mean_qloss(y[cut:], spec.predict(X[cut:]), tau)
        if loss < best_loss - 1e-12:
            best_lam, best_loss = lam, loss
    return float(best_lam)


def fit_quantile_lasso_cv(predictors, response, tau: float, grid=LASSO_GRID) -> LassoComboSpec:
    lam = select_lasso_lambda(predictors, response, tau, grid)
    return fit_quantile_lasso(predictors, response, tau, lam)
