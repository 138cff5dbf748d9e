"""Rolling-window forecasting, combination runs and the simulation study."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import backtest as bt
from . import combination as cmb
from . import quantile_models as qm
from . import volatility as vol
from .distributions import SEMIPARAMETRIC, DistKind, nominal_es_level, standard_laplace
from .errors import InputError, InsufficientDataError, InvariantError, TailRiskError
from .series import ReturnSeries

log = logging.getLogger(__name__)

DEFAULT_MODELS = (
    "EWMA", "GARCH-T", "GARCH-SKT", "GJRGARCH-T", "GJRGARCH-SKT",
    "EGARCH-N", "EGARCH-T", "EGARCH-SKT", "HS-168",
    "CARE-SAV", "CARE-AS", "CAViaR-ES-SAV-AR", "CAViaR-ES-AS-EXP",
)
SIMULATION_MODELS = (
    "EWMA", "GARCH-N", "GARCH-T", "GJRGARCH-N", "GJRGARCH-T",
    "CARE-AS", "CARE-SAV", "CAViaR-ES-SAV-AR", "CAViaR-ES-AS-EXP",
)
COMBINERS = ("Average", "Median", "Proposed")


# ---------------------------------------------------------------------------
# plan and panel


@dataclass(frozen=True)
class RollingPlan:
    initial_window: int = 2000
    hs_window: int = 168
    combo_window: int = 1251
    eval_tail: int = 1200
    alphas: tuple = (0.01, 0.05)
    model_list: tuple = DEFAULT_MODELS
    seed: int = 0
    cold_every: int = 250
    care_tau: str | float = "calibrate"

    def __post_init__(self):
        alphas = tuple(sorted(float(a) for a in self.alphas))
        if not alphas:
            raise InputError("at least one alpha is required")
        if any(a not in (0.01, 0.05) for a in alphas):
            raise InputError(f"alphas must be drawn from {{0.01, 0.05}}, got {alphas}")
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "model_list", tuple(self.model_list))
        for m in self.model_list:
            model_runner(m, self)
        for name in ("initial_window", "hs_window", "combo_window", "eval_tail", "cold_every"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be positive")
        if self.hs_window > self.initial_window:
            raise InputError("hs_window cannot exceed initial_window")

    def n_forecasts(self, n_obs: int) -> int:
        return n_obs - self.initial_window

    def check_series(self, n_obs: int) -> None:
        if n_obs < self.initial_window + 1:
            raise InsufficientDataError(
                f"insufficient data: {n_obs} returns, need at least {self.initial_window + 1}")

    def check_combination(self, n_forecasts: int) -> None:
        if self.combo_window + 1 > n_forecasts:
            raise InsufficientDataError(
                f"combination window {self.combo_window} needs more than {n_forecasts} forecasts")
        if self.eval_tail > n_forecasts - self.combo_window:
            raise InsufficientDataError(
                f"evaluation tail {self.eval_tail} exceeds {n_forecasts - self.combo_window} "
                "combined forecasts")


@dataclass
class ForecastPanel:
    """Aligned one-step forecasts: row ``t`` forecasts ``realized[t]``."""

    model_ids: tuple
    timestamps: np.ndarray
    var: np.ndarray
    es: np.ndarray
    realized: np.ndarray
    alpha: float
    flags: dict = field(default_factory=dict)
    dropped: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)

    def __post_init__(self):
        self.model_ids = tuple(self.model_ids)
        self.var = np.asarray(self.var, dtype=float)
        self.es = np.asarray(self.es, dtype=float)
        self.realized = np.asarray(self.realized, dtype=float)
        self.timestamps = np.asarray(self.timestamps)
        T, k = len(self.realized), len(self.model_ids)
        for name in ("var", "es"):
            if getattr(self, name).shape != (T, k):
                raise InputError(f"{name} matrix has shape {getattr(self, name).shape}, "
                                 f"expected {(T, k)}")
        if self.timestamps.shape != (T,):
            raise InputError("timestamps not aligned with realized returns")
        if not (np.all(np.isfinite(self.var)) and np.all(np.isfinite(self.es))):
            raise InputError("panel has missing cells")

    def __len__(self) -> int:
        return self.realized.size

    def column(self, model_id: str) -> tuple[np.ndarray, np.ndarray]:
        j = self.model_ids.index(model_id)
        return self.var[:, j], self.es[:, j]

    def tail(self, n: int) -> "ForecastPanel":
        if n > len(self):
            raise InsufficientDataError(f"requested last {n} rows of a {len(self)}-row panel")
        w = {k: v[-n:] for k, v in self.weights.items()}
        return replace(self, timestamps=self.timestamps[-n:], var=self.var[-n:],
                       es=self.es[-n:], realized=self.realized[-n:], weights=w)

    def select(self, model_ids) -> "ForecastPanel":
        idx = [self.model_ids.index(m) for m in model_ids]
        return replace(self, model_ids=tuple(model_ids), var=self.var[:, idx], es=self.es[:, idx])


# ---------------------------------------------------------------------------
# model runners


class _Runner:
    """Adapter: fit on a window, forecast, reuse a previous fit on a new window."""

    model_id: str
    per_alpha = False

    def window_length(self, plan: RollingPlan) -> int:
        return plan.initial_window

    def fit(self, window, alpha, seed, warm):
        raise NotImplementedError

    def warm(self, fitted):
        return None

    def badness(self, fitted, alpha):
        return 0.0

    def reuse(self, fitted, window, alpha):
        raise NotImplementedError

    def predict(self, fitted, alpha) -> tuple[float, float]:
        raise NotImplementedError


class _VolRunner(_Runner):
    def __init__(self, model_id, family, kind):
        self.model_id, self.family, self.kind = model_id, family, kind

    def fit(self, window, alpha, seed, warm):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return vol.fit_garch_family(window, self.family, self.kind, seed=seed,
                                        warm_start=warm)

    def warm(self, fitted):
        return None if self.family is vol.Family.EWMA else fitted.free

    def badness(self, fitted, alpha):
        return -fitted.loglik

    def reuse(self, fitted, window, alpha):
        return vol.refilter(fitted, window)

    def predict(self, fitted, alpha):
        f = vol.forecast_var_es(fitted.spec, fitted.state, alpha)
        return f.var, f.es


class _HSRunner(_Runner):
    def __init__(self, model_id, length=None):
        self.model_id, self.length = model_id, length

    def window_length(self, plan):
        return self.length or plan.hs_window

    def fit(self, window, alpha, seed, warm):
        return np.asarray(window)

    def reuse(self, fitted, window, alpha):
        return np.asarray(window)

    def predict(self, fitted, alpha):
        f = qm.hs_forecast(fitted, alpha)
        return f.var, f.es


class _CaviarEsRunner(_Runner):
    per_alpha = True

    def __init__(self, model_id, form, conn):
        self.model_id, self.form, self.conn = model_id, form, conn

    def fit(self, window, alpha, seed, warm):
        return qm.fit_caviar_es(window, self.form, self.conn, alpha, seed=seed, warm_start=warm)

    def warm(self, fitted):
        return np.concatenate([fitted.spec.caviar.betas, fitted.spec.gammas])

    def badness(self, fitted, alpha):
        return fitted.score

    def reuse(self, fitted, window, alpha):
        r = np.asarray(window, dtype=float)
        v0 = qm.initial_quantile(r, alpha)
        x0 = qm.initial_exceedance(r, v0)
        spec = fitted.spec
        v = qm.caviar_path(spec.caviar, r, v0, alpha)
        es = qm.K.es_path(spec.connection.code, np.array(spec.gammas), r, v, x0)
        score = qm.al_objective(spec, r, alpha, v0, x0)
        return qm.CaviarEsFit(spec, v0, x0, v, es, score)

    def predict(self, fitted, alpha):
        f = qm.caviar_es_forecast(fitted, alpha)
        return f.var, f.es


class _CareRunner(_Runner):
    per_alpha = True

    def __init__(self, model_id, form, tau):
        self.model_id, self.form, self.tau_mode = model_id, form, tau

    def _tau(self, alpha):
        if self.tau_mode == "calibrate":
            return None
        if self.tau_mode == "alpha":
            return alpha
        return float(self.tau_mode)

    def fit(self, window, alpha, seed, warm):
        return qm.fit_care(window, self.form, alpha, tau=self._tau(alpha), seed=seed,
                           warm_start=warm)

    def warm(self, fitted):
        return (np.array(fitted.spec.betas), fitted.spec.tau)

    def badness(self, fitted, alpha):
        if self.tau_mode == "calibrate":
            # calibrated fits differ in tau, so coverage error comes first
            return (abs(fitted.coverage - alpha), fitted.loss)
        return (0.0, fitted.loss)

    def reuse(self, fitted, window, alpha):
        r = np.asarray(window, dtype=float)
        mu0 = qm.expectile(r[:qm.INIT_OBS], fitted.spec.tau)
        path = qm.K.care_path(fitted.spec.form.code, np.array(fitted.spec.betas), r, mu0)
        if not np.all(np.isfinite(path)):
            raise InvariantError("CARE recursion left its domain", state={})
        return qm.CareFit(fitted.spec, mu0, path, fitted.loss, float(np.mean(r < path[:-1])))

    def predict(self, fitted, alpha):
        f = qm.care_var_es(fitted.spec, float(fitted.path[-1]), alpha)
        return f.var, f.es


_DISTS = {"N": DistKind.NORMAL, "T": DistKind.STUDENT_T, "SKT": DistKind.SKEW_T}
_FAMILIES = {"GARCH": vol.Family.GARCH11, "GJRGARCH": vol.Family.GJRGARCH11,
             "EGARCH": vol.Family.EGARCH11}


def model_runner(model_id: str, plan: RollingPlan | None = None) -> _Runner:
    """Look up a model by its identifier (e.g. ``GARCH-T``, ``HS-168``)."""
    parts = model_id.split("-")
    if model_id == "EWMA":
        return _VolRunner(model_id, vol.Family.EWMA, DistKind.NORMAL)
    if len(parts) == 2 and parts[0] in _FAMILIES and parts[1] in _DISTS:
        return _VolRunner(model_id, _FAMILIES[parts[0]], _DISTS[parts[1]])
    if parts[0] == "HS":
        if len(parts) == 1:
            return _HSRunner(model_id)
        if len(parts) == 2 and parts[1].isdigit() and int(parts[1]) > 0:
            return _HSRunner(model_id, int(parts[1]))
    if len(parts) == 2 and parts[0] == "CARE" and parts[1] in qm.CareForm.__members__:
        tau = plan.care_tau if plan is not None else "calibrate"
        return _CareRunner(model_id, qm.CareForm(parts[1]), tau)
    if (len(parts) == 4 and parts[:2] == ["CAViaR", "ES"]
            and parts[2] in qm.CaviarForm.__members__ and parts[3] in qm.Connection.__members__):
        return _CaviarEsRunner(model_id, qm.CaviarForm(parts[2]), qm.Connection(parts[3]))
    raise InputError(f"unknown model {model_id!r}")


def _seed(base: int, model_index: int, origin: int) -> int:
    return int(np.random.SeedSequence([base, model_index, origin]).generate_state(1)[0])


def _roll_model(runner: _Runner, r: np.ndarray, origins: np.ndarray, plan: RollingPlan,
                model_index: int, alphas, out_var, out_es, flags):
    """Fill one model's rows; returns a failure reason if the first window fails."""
    L = runner.window_length(plan)
    keys = alphas if runner.per_alpha else (None,)
    for key in keys:
        targets = (key,) if key is not None else alphas
        fa = key if key is not None else alphas[0]
        prev, warm = None, None
        for i, t in enumerate(origins):
            window = r[t - L:t]  # strictly before the forecast target r[t]
            seed = _seed(plan.seed, model_index, int(t))
            try:
                fitted = runner.fit(window, fa, seed, warm)
                if warm is not None and i % plan.cold_every == 0:
                    cold = runner.fit(window, fa, seed, None)
                    if runner.badness(cold, fa) < runner.badness(fitted, fa):
                        fitted = cold
                preds = [runner.predict(fitted, a) for a in targets]
            except TailRiskError as exc:
                if prev is None:
                    return f"first window failed: {exc}"
                flags.append((i, f"{type(exc).__name__}: {exc}"))
                try:
                    fitted = runner.reuse(prev, window, fa)
                    preds = [runner.predict(fitted, a) for a in targets]
                except TailRiskError:
                    fitted = prev
                    preds = None
            for a in targets:
                j = alphas.index(a)
                if preds is None:
                    out_var[j][i], out_es[j][i] = out_var[j][i - 1], out_es[j][i - 1]
                else:
                    out_var[j][i], out_es[j][i] = preds[targets.index(a)]
            prev = fitted
            warm = runner.warm(fitted)
    return None


def run_rolling(series: ReturnSeries, plan: RollingPlan) -> dict[float, ForecastPanel]:
    """One-step-ahead rolling forecasts for every model in the plan, per alpha."""
    r = np.asarray(series.returns, dtype=float)
    plan.check_series(r.size)
    origins = np.arange(plan.initial_window, r.size)
    m = origins.size
    alphas = plan.alphas
    cols_var = {a: [] for a in alphas}
    cols_es = {a: [] for a in alphas}
    kept, dropped, flags = [], {}, {}
    for k, model_id in enumerate(plan.model_list):
        runner = model_runner(model_id, plan)
        out_var = [np.full(m, np.nan) for _ in alphas]
        out_es = [np.full(m, np.nan) for _ in alphas]
        mflags: list = []
        log.info("rolling %s over %d origins", model_id, m)
        reason = _roll_model(runner, r, origins, plan, k, alphas, out_var, out_es, mflags)
        if reason is not None:
            log.warning("dropping %s: %s", model_id, reason)
            dropped[model_id] = reason
            continue
        kept.append(model_id)
        flags[model_id] = mflags
        for j, a in enumerate(alphas):
            cols_var[a].append(out_var[j])
            cols_es[a].append(out_es[j])
    if not kept:
        raise InsufficientDataError(f"every model failed on the first window: {dropped}")
    return {
        a: ForecastPanel(tuple(kept), series.timestamps[origins],
                         np.column_stack(cols_var[a]), np.column_stack(cols_es[a]),
                         r[origins], a, dict(flags), dict(dropped))
        for a in alphas
    }


# ---------------------------------------------------------------------------
# combination


def run_combination(panel: ForecastPanel, plan: RollingPlan, *,
                    max_evals: int = 10_000) -> ForecastPanel:
    """Append Average, Median and Proposed (joint AL) columns on rolling windows.

    Only the last ``len(panel) - combo_window`` rows are returned: row ``t``
    is combined with weights estimated on rows ``t - combo_window .. t - 1``.
    """
    n = plan.combo_window
    T = len(panel)
    if T < n + 1:
        raise InsufficientDataError(f"panel of {T} rows cannot feed a {n}-row combination window")
    V, E, r = panel.var, panel.es, panel.realized
    k = len(panel.model_ids)
    rows = np.arange(n, T)
    out_v = np.empty((rows.size, 3))
    out_e = np.empty((rows.size, 3))
    betas = np.empty((rows.size, k))
    gammas = np.empty((rows.size, k))
    cflags = []
    w = None
    for i, t in enumerate(rows):
        out_v[i, 0] = cmb.combine_simple_average(V[t])
        out_e[i, 0] = cmb.combine_simple_average(E[t])
        out_v[i, 1] = cmb.combine_median(V[t])
        out_e[i, 1] = cmb.combine_median(E[t])
        lo = t - n
        try:
            w = cmb.fit_joint_combination(V[lo:t], E[lo:t], r[lo:t], panel.alpha, window_id=int(t),
                                          warm_start=w if i % plan.cold_every else None,
                                          seed=_seed(plan.seed, 10_000, int(t)),
                                          max_evals=max_evals)
        except TailRiskError as exc:
            cflags.append((i, f"equal weights used: {exc}"))
            w = cmb.equal_weights(k, k, int(t), flag="infeasible window")
        f = cmb.combined_forecast(w, V[t], E[t], panel.alpha)
        if f.flag:
            cflags.append((i, f.flag))
        out_v[i, 2], out_e[i, 2] = f.var, f.es
        betas[i], gammas[i] = w.beta, w.gamma
    for c in (0, 1):
        # average/median of non-crossing pairs cannot cross, guard anyway
        bad = out_e[:, c] >= out_v[:, c]
        out_e[bad, c] = out_v[bad, c] - 1e-8
    flags = dict(panel.flags)
    flags["Proposed"] = cflags
    return ForecastPanel(
        panel.model_ids + COMBINERS, panel.timestamps[rows],
        np.hstack([V[rows], out_v]), np.hstack([E[rows], out_e]), r[rows], panel.alpha,
        flags, dict(panel.dropped), {"beta": betas, "gamma": gammas},
    )


# ---------------------------------------------------------------------------
# panel files


PANEL_HEADER = ("timestamp", "model", "alpha", "var", "es", "realized")


def _ts_str(t) -> str:
    if isinstance(t, np.datetime64):
        return str(np.datetime_as_string(t))
    return str(t)


def write_panel_csv(panels, path: str | Path) -> None:
    """Long format, one row per (timestamp, model, alpha)."""
    if isinstance(panels, ForecastPanel):
        panels = [panels]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PANEL_HEADER)
        for p in panels:
            for j, mid in enumerate(p.model_ids):
                for t in range(len(p)):
                    w.writerow([_ts_str(p.timestamps[t]), mid, repr(p.alpha),
                                repr(float(p.var[t, j])), repr(float(p.es[t, j])),
                                repr(float(p.realized[t]))])


def _parse_ts(s: str):
    try:
        return int(s)
    except ValueError:
        return np.datetime64(s)


def read_panel_csv(path: str | Path) -> dict[float, ForecastPanel]:
    path = Path(path)
    cells: dict = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(h.strip() for h in next(reader, ()))
        if header != PANEL_HEADER:
            raise InputError(f"{path}: header must be {','.join(PANEL_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 6:
                raise InputError(f"{path}:{lineno}: expected 6 columns, got {len(row)}")
            try:
                ts = _parse_ts(row[0])
            except ValueError:
                raise InputError(f"{path}:{lineno}: column timestamp: bad value {row[0]!r}") from None
            vals = []
            for col, name in zip(row[2:], PANEL_HEADER[2:]):
                try:
                    v = float(col)
                except ValueError:
                    raise InputError(f"{path}:{lineno}: column {name}: not a number {col!r}") from None
                if not math.isfinite(v):
                    raise InputError(f"{path}:{lineno}: column {name}: non-finite value")
                vals.append(v)
            a, v, e, real = vals
            cells.setdefault(a, {}).setdefault(row[1], {})[ts] = (v, e, real, lineno)
    panels = {}
    for a, models in cells.items():
        ids = tuple(models)
        times = sorted(models[ids[0]])
        for mid in ids:
            if sorted(models[mid]) != times:
                raise InputError(f"{path}: model {mid} at alpha {a} has different timestamps "
                                 f"from {ids[0]}")
        V = np.array([[models[mid][t][0] for mid in ids] for t in times])
        E = np.array([[models[mid][t][1] for mid in ids] for t in times])
        R = np.array([models[ids[0]][t][2] for t in times])
        for mid in ids[1:]:
            for t in times:
                if models[mid][t][2] != models[ids[0]][t][2]:
                    raise InputError(f"{path}:{models[mid][t][3]}: column realized disagrees "
                                     f"with model {ids[0]}")
        panels[a] = ForecastPanel(ids, np.array(times), V, E, R, a)
    if not panels:
        raise InputError(f"{path}: no panel rows")
    return panels


# ---------------------------------------------------------------------------
# simulation study


DGP_MEAN = 0.025
DGP_SCALE = 0.85
DGP_OMEGA, DGP_ALPHA, DGP_ASYM, DGP_BETA = 0.025, 0.25, 0.035, 0.065
DGP_BURN = 500


def simulate_dgp(n: int = 3500, seed: int = 0, burn: int = DGP_BURN) -> ReturnSeries:
    """EGARCH(1,1) log-variance recursion with standard Laplace shocks.

    ``r = 0.025 + eps`` with ``eps = 0.85 sigma z``; the recursion starts at
    the stationary mean of the log variance. Timestamps are hourly.
    """
    if n < 100:
        raise InputError("simulate at least 100 observations")
    rng = np.random.default_rng(seed)
    z = standard_laplace(rng, n + burn)
    e_abs = DGP_SCALE * 1.0  # E|z| = 1 for the unit-scale Laplace law
    lnv = (DGP_OMEGA + DGP_ALPHA * e_abs) / (1.0 - DGP_BETA)
    out = np.empty(n + burn)
    for t in range(n + burn):
        sigma = math.exp(0.5 * lnv)
        eps = DGP_SCALE * sigma * z[t]
        out[t] = DGP_MEAN + eps
        lnv = DGP_OMEGA + DGP_ALPHA * (abs(eps) + DGP_ASYM * eps) / sigma + DGP_BETA * lnv
    start = np.datetime64("2020-01-01T00:00")
    ts = start + np.arange(n) * np.timedelta64(1, "h")
    return ReturnSeries(ts, out[burn:])


QLASSO_ES_LEVELS = {
    "QLASSO-N": 0.0196,
    "QLASSO-T(4)": 0.0164,
    "QLASSO-T(6)": 0.0175,
    "QLASSO-AL": 0.0184,
}


def model_es_level(model_id: str, alpha: float) -> float:
    """Nominal level at which a model's ES column is backtested."""
    parts = model_id.split("-")
    if model_id in QLASSO_ES_LEVELS:
        return QLASSO_ES_LEVELS[model_id]
    if model_id == "EWMA" or parts[-1] == "N":
        return nominal_es_level(DistKind.NORMAL, alpha=alpha)
    if parts[-1] == "T":
        return nominal_es_level(DistKind.STUDENT_T, alpha=alpha)
    if parts[-1] == "SKT":
        return nominal_es_level(DistKind.SKEW_T, alpha=alpha)
    return nominal_es_level(SEMIPARAMETRIC, alpha=alpha)


@dataclass(frozen=True)
class SimulationRow:
    model_id: str
    vrate: float = math.nan
    vratio: float = math.nan
    dq4_p: float = math.nan
    dq4_accept: bool | None = None
    qlf: float = math.nan
    qlf_rank: int | None = None
    es_level: float = math.nan
    es_rate: float = math.nan
    es_ratio: float = math.nan
    es_dq4_p: float = math.nan
    es_dq4_accept: bool | None = None
    es_qlf: float = math.nan
    es_qlf_rank: int | None = None


@dataclass
class SimulationResult:
    seed: int
    rows: list
    panel: ForecastPanel
    lasso: dict

    def row(self, model_id: str) -> SimulationRow:
        for r in self.rows:
            if r.model_id == model_id:
                return r
        raise KeyError(model_id)


def _quantile_metrics(r, f, level, size=0.05):
    hits = bt.HitSequence.from_forecasts(r, f, level)
    vrate, vratio = bt.violation_ratio(r, f, level)
    dq = bt.dq_test(hits, f, 4)
    return vrate, vratio, dq.p_value, dq.p_value >= size, bt.quantile_loss(r, f, level)


def _ranks(values: dict) -> dict:
    order = sorted(values, key=lambda k: values[k])
    return {k: i + 1 for i, k in enumerate(order)}


def run_simulation_study(seed: int = 0, *, n: int = 3500, window: int = 1000,
                         alpha: float = 0.05, models=SIMULATION_MODELS,
                         care_tau: str | float = "alpha", lasso_mode: str = "in-sample",
                         cold_every: int = 250) -> SimulationResult:
    """Simulate, roll the individual models, combine with quantile LASSO, evaluate.

    VaR columns are combined at ``alpha`` and ES columns at each QLASSO
    nominal level. With ``lasso_mode="in-sample"`` the regressions are fitted
    on the full forecast sample; ``"rolling"`` fits on the first half and
    evaluates on the second.
    """
    series = simulate_dgp(n, seed)
    plan = RollingPlan(initial_window=window, alphas=(alpha,), model_list=tuple(models),
                       seed=seed, care_tau=care_tau, cold_every=cold_every)
    panel = run_rolling(series, plan)[alpha]
    r = panel.realized
    lasso = {}
    combined_var = {}
    combined_es = {}

    def lasso_fit(X, tau):
        if lasso_mode == "in-sample":
            spec = cmb.fit_quantile_lasso_cv(X, r, tau)
            return spec, spec.predict(X), slice(None)
        if lasso_mode == "rolling":
            h = len(r) // 2
            spec = cmb.fit_quantile_lasso_cv(X[:h], r[:h], tau)
            return spec, spec.predict(X[h:]), slice(h, None)
        raise InputError(f"unknown lasso mode {lasso_mode!r}")

    spec, pred, sl = lasso_fit(panel.var, alpha)
    lasso["QLASSO"] = spec
    combined_var["QLASSO"] = pred
    for name, tau in QLASSO_ES_LEVELS.items():
        spec, pred, _ = lasso_fit(panel.es, tau)
        lasso[name] = spec
        combined_es[name] = pred
    rs = r[sl]

    var_stats, es_stats = {}, {}
    for j, mid in enumerate(panel.model_ids):
        var_stats[mid] = _quantile_metrics(rs, panel.var[sl, j], alpha)
        lvl = model_es_level(mid, alpha)
        es_stats[mid] = (lvl,) + _quantile_metrics(rs, panel.es[sl, j], lvl)
    var_stats["QLASSO"] = _quantile_metrics(rs, combined_var["QLASSO"], alpha)
    for name, pred in combined_es.items():
        lvl = QLASSO_ES_LEVELS[name]
        es_stats[name] = (lvl,) + _quantile_metrics(rs, pred, lvl)
    vrank = _ranks({k: v[4] for k, v in var_stats.items()})
    erank = _ranks({k: v[5] for k, v in es_stats.items()})
    rows = []
    for mid in list(panel.model_ids) + ["QLASSO"] + list(QLASSO_ES_LEVELS):
        kw = {}
        if mid in var_stats:
            v = var_stats[mid]
            kw.update(vrate=v[0], vratio=v[1], dq4_p=v[2], dq4_accept=bool(v[3]), qlf=v[4],
                      qlf_rank=vrank[mid])
        if mid in es_stats:
            e = es_stats[mid]
            kw.update(es_level=e[0], es_rate=e[1], es_ratio=e[2], es_dq4_p=e[3],
                      es_dq4_accept=bool(e[4]), es_qlf=e[5], es_qlf_rank=erank[mid])
        rows.append(SimulationRow(mid, **kw))
    return SimulationResult(seed, rows, panel, lasso)
