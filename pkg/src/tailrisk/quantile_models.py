"""Historical simulation, CAViaR, CAViaR-ES and CARE models.

These models forecast the tail directly instead of through a volatility
recursion. Quantile and AL-score objectives are piecewise smooth, so all of
them are fitted by Nelder-Mead from several random feasible starts with the
best optimum kept.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from ._simplex import simplex_search
from .errors import (
    ConvergenceError,
    DomainError,
    InfeasibleError,
    InsufficientDataError,
)
from .records import RiskForecast

ADA_G = 10.0
INIT_OBS = 300
N_STARTS = 5
MAX_EVALS = 10_000
# a warm start is already near the optimum: looser stopping and no restarts
# move the mean objective by ~1e-4 at well under half the cost
WARM_SEARCH = {"xtol": 1e-4, "ftol": 1e-8, "restarts": 0}


class CaviarForm(str, enum.Enum):
    SAV = "SAV"
    AS = "AS"
    IG = "IG"
    ADA = "ADA"

    @property
    def code(self) -> int:
        return ["SAV", "AS", "IG", "ADA"].index(self.value)

    @property
    def n_betas(self) -> int:
        return {"SAV": 3, "AS": 4, "IG": 3, "ADA": 1}[self.value]


class CareForm(str, enum.Enum):
    SAV = "SAV"
    AS = "AS"
    IG = "IG"

    @property
    def code(self) -> int:
        return ["SAV", "AS", "IG"].index(self.value)

    @property
    def n_betas(self) -> int:
        return {"SAV": 3, "AS": 4, "IG": 3}[self.value]


class Connection(str, enum.Enum):
    EXP = "EXP"
    AR = "AR"

    @property
    def code(self) -> int:
        return 0 if self is Connection.EXP else 1

    @property
    def n_gammas(self) -> int:
        return 1 if self is Connection.EXP else 3


@dataclass(frozen=True)
class CaviarSpec:
    form: CaviarForm
    betas: tuple
    smoothing_g: float = ADA_G

    def __post_init__(self):
        form = CaviarForm(self.form)
        object.__setattr__(self, "form", form)
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if len(self.betas) != form.n_betas:
            raise DomainError(f"CAViaR-{form.value} needs {form.n_betas} betas")
        if form is CaviarForm.IG and min(self.betas) <= 0:
            raise DomainError("CAViaR-IG betas must be positive")
        if not self.smoothing_g > 0:
            raise DomainError("ADA smoothing constant must be positive")


@dataclass(frozen=True)
class CaviarEsSpec:
    caviar: CaviarSpec
    connection: Connection
    gammas: tuple

    def __post_init__(self):
        conn = Connection(self.connection)
        object.__setattr__(self, "connection", conn)
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        if len(self.gammas) != conn.n_gammas:
            raise DomainError(f"{conn.value} connection needs {conn.n_gammas} gammas")
        if conn is Connection.AR and min(self.gammas) < 0:
            raise DomainError("AR connection gammas must be nonnegative")

    @property
    def multiplier(self) -> float:
        """ES/VaR ratio of the EXP connection."""
        return 1.0 + math.exp(self.gammas[0])


@dataclass(frozen=True)
class CareSpec:
    form: CareForm
    betas: tuple
    tau: float

    def __post_init__(self):
        form = CareForm(self.form)
        object.__setattr__(self, "form", form)
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if len(self.betas) != form.n_betas:
            raise DomainError(f"CARE-{form.value} needs {form.n_betas} betas")
        if form is CareForm.IG and min(self.betas) <= 0:
            raise DomainError("CARE-IG betas must be positive")
        if not 0.0 < self.tau < 0.5:
            raise DomainError(f"lower-tail expectile level must lie in (0, 0.5), got {self.tau}")


@dataclass(frozen=True)
class CaviarFit:
    spec: CaviarSpec
    v0: float
    path: np.ndarray = field(repr=False)
    loss: float

    @property
    def forecast(self) -> float:
        return float(self.path[-1])


@dataclass(frozen=True)
class CaviarEsFit:
    spec: CaviarEsSpec
    v0: float
    x0: float
    var_path: np.ndarray = field(repr=False)
    es_path: np.ndarray = field(repr=False)
    score: float
    two_stage_score: float = math.nan


@dataclass(frozen=True)
class CareFit:
    spec: CareSpec
    mu0: float
    path: np.ndarray = field(repr=False)
    loss: float
    coverage: float


def _returns(window) -> np.ndarray:
    return np.ascontiguousarray(getattr(window, "returns", window), dtype=float)


# ---------------------------------------------------------------------------
# historical simulation


def hs_forecast(window, alpha: float, **meta) -> RiskForecast:
    """Empirical VaR (order statistic ``ceil(alpha n)``) and tail average."""
    r = np.sort(_returns(window))
    n = r.size
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    if n < 1.0 / alpha - 1e-9:
        raise InsufficientDataError(f"HS needs at least {math.ceil(1 / alpha)} observations")
    k = max(math.ceil(alpha * n - 1e-9), 1)
    var = float(r[k - 1])
    below = r[r < var]
    if below.size == 0:
        below = r[r <= var]
    return RiskForecast(var, float(below.mean()), alpha, **meta)


# ---------------------------------------------------------------------------
# CAViaR


def caviar_path(spec: CaviarSpec, returns, v0: float, alpha: float = 0.05) -> np.ndarray:
    """VaR recursion over ``returns`` starting at ``v0``; length ``n + 1``."""
    if not v0 < 0:
        raise DomainError("lower-tail recursion must start below zero")
    r = _returns(returns)
    path = K.caviar_path(spec.form.code, np.array(spec.betas), r, float(v0), alpha,
                         spec.smoothing_g)
    if np.any(np.isnan(path)):
        raise DomainError("CAViaR-IG recursion left the domain of the square root")
    return path


def initial_quantile(r: np.ndarray, alpha: float) -> float:
    return float(np.quantile(r[:INIT_OBS], alpha))


def _caviar_start(form: CaviarForm, r: np.ndarray, q: float, rng) -> np.ndarray:
    """Random start whose implied unconditional VaR equals ``q``."""
    if form is CaviarForm.ADA:
        return np.array([-rng.uniform(0.05, 1.0) * max(abs(q), 0.1)])
    b2 = rng.uniform(0.7, 0.98)
    if form is CaviarForm.SAV:
        b3 = -rng.uniform(0.02, 0.4)
        return np.array([q * (1 - b2) - b3 * np.mean(np.abs(r)), b2, b3])
    if form is CaviarForm.AS:
        b3 = -rng.uniform(0.0, 0.4)
        b4 = -rng.uniform(0.02, 0.5)
        b1 = q * (1 - b2) - b3 * np.mean(np.maximum(r, 0)) - b4 * np.mean(-np.minimum(r, 0))
        return np.array([b1, b2, b3, b4])
    b2 = rng.uniform(0.7, 0.95)
    b3 = rng.uniform(0.02, 0.3)
    b1 = max(q * q * (1 - b2) - b3 * np.mean(r * r), 1e-3 * q * q + 1e-8)
    return np.array([b1, b2, b3])


def _best_of(code, starts, r, fpar, ipar, max_evals=MAX_EVALS, warm=False):
    best_x, best_f = None, math.inf
    opts = WARM_SEARCH if warm else {}
    for s in starts:
        x, f, _ = simplex_search(code, s, r, fpar=fpar, ipar=ipar, max_evals=max_evals, **opts)
        if f < best_f:
            best_x, best_f = x, f
    return best_x, best_f


def fit_caviar(window, form: CaviarForm | str, alpha: float, *, seed: int = 0,
               n_starts: int = N_STARTS, warm_start=None, smoothing_g: float = ADA_G,
               v0: float | None = None) -> CaviarFit:
    """Minimise the mean quantile loss of the CAViaR recursion."""
    form = CaviarForm(form)
    r = _returns(window)
    if r.size < INIT_OBS:
        raise InsufficientDataError(f"CAViaR needs at least {INIT_OBS} observations")
    v0 = initial_quantile(r, alpha) if v0 is None else v0
    if not v0 < 0:
        raise InfeasibleError("initial quantile is not negative", state={"best": None})
    fpar = (v0, alpha, smoothing_g)
    ipar = (form.code,)
    rng = np.random.default_rng(seed)
    if warm_start is not None:
        starts = [np.asarray(warm_start, dtype=float)]
    else:
        starts = [_caviar_start(form, r, v0, rng) for _ in range(n_starts)]
    x, f = _best_of(0, starts, r, fpar, ipar, warm=warm_start is not None)
    if f >= K.BIG:
        raise InfeasibleError(f"CAViaR-{form.value}: every start infeasible", state={"best": x})
    spec = CaviarSpec(form, tuple(x), smoothing_g)
    path = K.caviar_path(form.code, x, r, v0, alpha, smoothing_g)
    return CaviarFit(spec, v0, path, f)


def caviar_loss(spec: CaviarSpec, window, alpha: float, v0: float | None = None) -> float:
    r = _returns(window)
    v0 = initial_quantile(r, alpha) if v0 is None else v0
    return float(K.objective(0, np.array(spec.betas), r, np.zeros((0, 0)),
                             np.array([v0, alpha, spec.smoothing_g]),
                             np.array([spec.form.code], dtype=np.int64)))


# ---------------------------------------------------------------------------
# CAViaR-ES


def initial_exceedance(r: np.ndarray, v0: float) -> float:
    head = r[:INIT_OBS]
    ex = v0 - head[head < v0]
    return float(ex.mean()) if ex.size else 0.1 * abs(v0)


def _gamma_grid(conn: Connection, scale: float):
    if conn is Connection.EXP:
        for m in np.linspace(1.02, 3.0, 50):
            yield np.array([math.log(m - 1.0)])
        return
    for g0 in (0.0, 0.02 * scale, 0.1 * scale):
        for g1 in (0.0, 0.05, 0.2, 0.5):
            for g2 in (0.5, 0.8, 0.9, 0.95, 0.99):
                yield np.array([g0, g1, g2])


def al_objective(spec: CaviarEsSpec, r, alpha: float, v0: float, x0: float) -> float:
    x = np.concatenate([spec.caviar.betas, spec.gammas])
    return float(K.objective(1, x, _returns(r), np.zeros((0, 0)),
                             np.array([v0, alpha, spec.caviar.smoothing_g, x0]),
                             np.array([spec.caviar.form.code, spec.connection.code,
                                       spec.caviar.form.n_betas], dtype=np.int64)))


def fit_caviar_es(window, form: CaviarForm | str, connection: Connection | str, alpha: float,
                  *, seed: int = 0, n_starts: int = N_STARTS, warm_start=None,
                  smoothing_g: float = ADA_G) -> CaviarEsFit:
    """Jointly fit CAViaR betas and ES-connection gammas by the mean AL score.

    Cold fits start from a two-stage solution (quantile-loss betas, gammas
    from a grid) plus perturbations of it; the returned score never exceeds
    the two-stage score.
    """
    form = CaviarForm(form)
    conn = Connection(connection)
    r = _returns(window)
    if r.size < INIT_OBS:
        raise InsufficientDataError(f"CAViaR-ES needs at least {INIT_OBS} observations")
    v0 = initial_quantile(r, alpha)
    if not v0 < 0:
        raise InfeasibleError("initial quantile is not negative", state={"best": None})
    x0 = initial_exceedance(r, v0)
    fpar = (v0, alpha, smoothing_g, x0)
    ipar = (form.code, conn.code, form.n_betas)
    nb = form.n_betas

    def score(x):
        return K.objective(1, x, r, np.zeros((0, 0)), np.asarray(fpar, dtype=float),
                           np.asarray(ipar, dtype=np.int64))

    two_stage = math.nan
    if warm_start is not None:
        starts = [np.asarray(warm_start, dtype=float)]
    else:
        cav = fit_caviar(r, form, alpha, seed=seed, n_starts=n_starts, smoothing_g=smoothing_g,
                         v0=v0)
        b = np.array(cav.spec.betas)
        cand = [np.concatenate([b, g]) for g in _gamma_grid(conn, abs(v0))]
        vals = [score(c) for c in cand]
        base = cand[int(np.argmin(vals))]
        two_stage = float(min(vals))
        rng = np.random.default_rng(seed + 1)
        starts = [base]
        for _ in range(n_starts - 1):
            s = base * (1.0 + rng.normal(0, 0.1, base.size))
            if conn is Connection.AR:
                s[nb:] = np.abs(s[nb:])
            if form is CaviarForm.IG:
                s[:nb] = np.abs(s[:nb])
            starts.append(s)
    x, f = _best_of(1, starts, r, fpar, ipar, warm=warm_start is not None)
    if f >= K.BIG:
        raise InfeasibleError(f"CAViaR-ES-{form.value}-{conn.value}: no feasible start",
                              state={"best": x})
    spec = CaviarEsSpec(CaviarSpec(form, tuple(x[:nb]), smoothing_g), conn, tuple(x[nb:]))
    v = K.caviar_path(form.code, x[:nb], r, v0, alpha, smoothing_g)
    es = K.es_path(conn.code, x[nb:], r, v, x0)
    return CaviarEsFit(spec, v0, x0, v, es, f, two_stage)


def caviar_es_forecast(fit: CaviarEsFit, alpha: float, **meta) -> RiskForecast:
    v, e = float(fit.var_path[-1]), float(fit.es_path[-1])
    if not e < v:
        raise ConvergenceError("ES forecast does not lie below VaR", state={"var": v, "es": e})
    return RiskForecast(v, e, alpha, **meta)


# ---------------------------------------------------------------------------
# CARE


def expectile(x, tau: float, tol: float = 1e-12, max_iter: int = 200) -> float:
    """Sample ``tau``-expectile by iteratively reweighted means."""
    x = np.asarray(x, dtype=float)
    if not 0 < tau < 1:
        raise DomainError("tau must lie in (0, 1)")
    m = float(x.mean())
    for _ in range(max_iter):
        w = np.where(x < m, 1.0 - tau, tau)
        m_new = float(np.sum(w * x) / np.sum(w))
        if abs(m_new - m) <= tol * max(1.0, abs(m)):
            return m_new
        m = m_new
    return m


def _care_start(form: CareForm, r: np.ndarray, e: float, rng) -> np.ndarray:
    b2 = rng.uniform(0.7, 0.98)
    if form is CareForm.SAV:
        b3 = -rng.uniform(0.02, 0.4)
        return np.array([e * (1 - b2) - b3 * np.mean(np.abs(r)), b2, b3])
    if form is CareForm.AS:
        b3 = -rng.uniform(0.0, 0.4)
        b4 = -rng.uniform(0.02, 0.5)
        pos = np.mean(np.where(r > 0, np.abs(r), 0.0))
        neg = np.mean(np.where(r < 0, np.abs(r), 0.0))
        return np.array([e * (1 - b2) - b3 * pos - b4 * neg, b2, b3, b4])
    b2 = rng.uniform(0.7, 0.95)
    b3 = rng.uniform(0.02, 0.3)
    return np.array([max(e * e * (1 - b2) - b3 * np.mean(r * r), 1e-3 * e * e + 1e-8), b2, b3])


def _fit_care_fixed(r, form: CareForm, tau: float, mu0: float, starts,
                    warm: bool = False) -> tuple[np.ndarray, float]:
    x, f = _best_of(2, starts, r, (mu0, tau), (form.code,), warm=warm)
    if f >= K.BIG:
        raise InfeasibleError(f"CARE-{form.value}: every start infeasible", state={"best": x})
    return x, f


def fit_care(window, form: CareForm | str, alpha: float, *, tau: float | None = None,
             seed: int = 0, n_starts: int = N_STARTS, warm_start=None,
             max_refits: int = 30) -> CareFit:
    """Fit a CARE model by asymmetric least squares.

    With ``tau=None`` the expectile level is calibrated by bisection so that
    the in-sample share of returns below the fitted path equals ``alpha``
    (refitting at each probe). A numeric ``tau`` skips calibration.
    ``warm_start`` is a ``(betas, tau)`` pair from a previous window.
    """
    form = CareForm(form)
    r = _returns(window)
    if r.size < INIT_OBS:
        raise InsufficientDataError(f"CARE needs at least {INIT_OBS} observations")
    rng = np.random.default_rng(seed)
    warm_b, warm_tau = (None, None) if warm_start is None else warm_start

    def fit_at(t, start_b):
        mu0 = expectile(r[:INIT_OBS], t)
        if start_b is not None:
            starts = [np.asarray(start_b, dtype=float)]
        else:
            e = expectile(r, t)
            starts = [_care_start(form, r, e, rng) for _ in range(n_starts)]
        x, f = _fit_care_fixed(r, form, t, mu0, starts, warm=start_b is not None)
        path = K.care_path(form.code, x, r, mu0)
        cov = float(np.mean(r < path[:-1]))
        return x, f, mu0, path, cov

    if tau is not None:
        x, f, mu0, path, cov = fit_at(tau, warm_b)
        return CareFit(CareSpec(form, tuple(x), tau), mu0, path, f, cov)

    # calibration: coverage is nondecreasing in tau
    lo, hi = 1e-5, 0.5 - 1e-9
    probes = 0
    best = None
    start_b = warm_b
    guess = warm_tau if warm_tau is not None else 0.25 * alpha
    if warm_tau is not None:
        lo_w, hi_w = max(lo, guess / 1.5), min(hi, guess * 1.5)
        res_lo = fit_at(lo_w, start_b)
        res_hi = fit_at(hi_w, res_lo[0])
        probes += 2
        if res_lo[4] <= alpha <= res_hi[4]:
            lo, hi = lo_w, hi_w
            best = min((res_lo, lo_w), (res_hi, hi_w), key=lambda p: abs(p[0][4] - alpha))
            start_b = res_hi[0]
        elif res_lo[4] > alpha:
            hi = lo_w
        else:
            lo = hi_w
    tol = 0.5 / r.size
    while probes < max_refits:
        mid = math.sqrt(lo * hi)  # geometric bisection: tau spans orders of magnitude
        res = fit_at(mid, start_b)
        probes += 1
        start_b = res[0]
        if best is None or abs(res[4] - alpha) < abs(best[0][4] - alpha):
            best = (res, mid)
        if abs(res[4] - alpha) <= tol or hi / lo < 1.0005:
            break
        if res[4] < alpha:
            lo = mid
        else:
            hi = mid
    if best is None or abs(best[0][4] - alpha) > 0.25 * alpha + tol:
        raise ConvergenceError("CARE expectile level calibration failed",
                               state={"lo": lo, "hi": hi, "probes": probes})
    (x, f, mu0, path, cov), t = best
    return CareFit(CareSpec(form, tuple(x), t), mu0, path, f, cov)


def care_var_es(spec: CareSpec, mu_tau: float, alpha: float, **meta) -> RiskForecast:
    """Map an expectile forecast to (VaR, ES)."""
    tau = spec.tau
    if not 0 < tau < 0.5:
        raise DomainError("tau must lie in (0, 0.5)")
    if not mu_tau < 0:
        raise DomainError(f"expectile forecast must be negative, got {mu_tau}")
    es = (1.0 + tau / ((1.0 - 2.0 * tau) * alpha)) * mu_tau
    return RiskForecast(float(mu_tau), float(es), alpha, **meta)
