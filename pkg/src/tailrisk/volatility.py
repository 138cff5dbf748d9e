"""EWMA and GARCH-family conditional variance models.

Parameters are estimated by maximum likelihood with a constant mean under a
normal, standardised-t or skewed-t innovation law. The optimiser works on
unconstrained coordinates so every evaluated point satisfies the family's
positivity and stationarity restrictions.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import optimize

from .distributions import (
    SHAPE_BOUNDS,
    DistKind,
    NU_MAX,
    NU_MIN,
    DistributionSpec,
    shape_from_free,
    shape_start,
    logpdf_consts,
    logpdf_core,
    var_es,
)
from .errors import DomainError, FittingError, InsufficientDataError, InvariantError
from .records import RiskForecast

RISKMETRICS_THETA = 0.94
MIN_WINDOW = 250
# finite stand-in for an undefined likelihood; huge values break the line search
_BIG = 1e12


class Family(str, enum.Enum):
    EWMA = "EWMA"
    GARCH11 = "GARCH"
    EGARCH11 = "EGARCH"
    GJRGARCH11 = "GJRGARCH"

    @property
    def code(self) -> int:
        return {"EWMA": 0, "GARCH": 1, "EGARCH": 2, "GJRGARCH": 3}[self.value]


PARAM_NAMES = {
    Family.EWMA: ("theta",),
    Family.GARCH11: ("omega", "alpha", "beta"),
    Family.EGARCH11: ("omega", "alpha", "gamma", "beta"),
    Family.GJRGARCH11: ("omega", "alpha", "gamma", "beta"),
}


@dataclass(frozen=True)
class VolModelSpec:
    family: Family
    dist: DistributionSpec
    params: dict
    mean: float

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        p = self.params
        if set(p) != set(PARAM_NAMES[self.family]):
            raise DomainError(f"{self.family.value} expects parameters {PARAM_NAMES[self.family]}")
        if self.family is Family.EWMA:
            if not 0.0 < p["theta"] <= 1.0:
                raise DomainError("EWMA theta must lie in (0, 1]")
        elif self.family is Family.GARCH11:
            if not (p["omega"] > 0 and p["alpha"] >= 0 and p["beta"] >= 0
                    and p["alpha"] + p["beta"] < 1):
                raise DomainError(f"GARCH parameters violate positivity/stationarity: {p}")
        elif self.family is Family.GJRGARCH11:
            if not (p["omega"] > 0 and p["alpha"] >= 0 and p["beta"] >= 0
                    and p["alpha"] + p["gamma"] >= 0
                    and p["alpha"] + p["gamma"] / 2 + p["beta"] < 1):
                raise DomainError(f"GJR-GARCH parameters violate positivity/stationarity: {p}")
        elif not abs(p["beta"]) < 1:
            raise DomainError("EGARCH requires |beta| < 1")

    def vector(self) -> np.ndarray:
        return np.array([self.params[k] for k in PARAM_NAMES[self.family]], dtype=float)


@dataclass(frozen=True)
class VolState:
    """Variance and innovation at the last in-sample time point."""

    sigma2: float
    eps: float
    r: float


@dataclass(frozen=True)
class VolFit:
    spec: VolModelSpec
    state: VolState
    loglik: float
    free: np.ndarray = field(repr=False)
    warning: str | None = None


# ---------------------------------------------------------------------------
# kernels


@njit(cache=True)
def _step(family, vp, eps, s2):
    if family == 0:
        return (1.0 - vp[0]) * eps * eps + vp[0] * s2
    if family == 1:
        return vp[0] + vp[1] * eps * eps + vp[2] * s2
    if family == 2:
        sd = math.sqrt(s2)
        lv = vp[0] + vp[1] * abs(eps) / sd + vp[2] * eps / sd + vp[3] * math.log(s2)
        # keep ln(sigma^2) finite for any parameters
        return math.exp(min(max(lv, -300.0), 300.0))
    lev = vp[2] * eps * eps if eps < 0.0 else 0.0
    return vp[0] + vp[1] * eps * eps + lev + vp[3] * s2


@njit(cache=True)
def _variance_path(family, vp, eps, s0):
    n = eps.size
    out = np.empty(n + 1)
    out[0] = s0
    for t in range(n):
        out[t + 1] = _step(family, vp, eps[t], out[t])
    return out


@njit(cache=True)
def _nll(family, dcode, mu, vp, nu, lam, r, s0):
    s2 = s0
    total = 0.0
    k0, a, b = logpdf_consts(dcode, nu, lam)
    for t in range(r.size):
        if t > 0:
            s2 = _step(family, vp, r[t - 1] - mu, s2)
        if not (s2 > 1e-300) or not math.isfinite(s2):
            return _BIG
        total -= logpdf_core(dcode, (r[t] - mu) / math.sqrt(s2), nu, lam, k0, a, b) - 0.5 * math.log(s2)
    if not total < _BIG:
        return _BIG
    return total


@njit(cache=True)
def _free_nll(family, dcode, free, r, s0):
    """Negative log-likelihood at unconstrained coordinates ``[mu, variance..., shape...]``."""
    if family == 2:
        nv = 4
        vp = np.array([free[1], free[2], free[3], math.tanh(free[4])])
    else:
        nv = 3 if family == 1 else 4
        m = 0.0
        for k in range(2, nv + 1):
            m = max(m, free[k])
        d = math.exp(-m)
        w = np.empty(nv - 1)
        for k in range(nv - 1):
            w[k] = math.exp(free[k + 2] - m)
            d += w[k]
        w /= d
        if family == 1:
            vp = np.array([math.exp(free[1]), w[0], w[1]])
        else:
            vp = np.array([math.exp(free[1]), w[0], 2.0 * w[1], w[2]])
    nu = 0.0
    lam = 0.0
    if dcode >= 1:
        nu = min(NU_MIN + math.exp(free[nv + 1]), NU_MAX)
    if dcode == 2:
        lam = math.tanh(free[nv + 2])
    return _nll(family, dcode, free[0], vp, nu, lam, r, s0)


@njit(cache=True)
def _free_nll_grad(family, dcode, free, r, s0, hi):
    """Value and forward-difference gradient (backward at an upper bound)."""
    f0 = _free_nll(family, dcode, free, r, s0)
    g = np.empty(free.size)
    x = free.copy()
    for k in range(free.size):
        h = 1.4901161193847656e-08 * max(1.0, abs(free[k]))
        if free[k] + h > hi[k]:
            h = -h
        x[k] = free[k] + h
        g[k] = (_free_nll(family, dcode, x, r, s0) - f0) / h
        x[k] = free[k]
    return f0, g


def ewma_step(r_t: float, sigma2_t: float, theta: float = RISKMETRICS_THETA) -> float:
    """RiskMetrics update ``(1 - theta) r_t^2 + theta sigma2_t``."""
    if not sigma2_t > 0:
        raise DomainError("sigma2_t must be positive")
    if not 0.0 < theta <= 1.0:
        raise DomainError("theta must lie in (0, 1]")
    return (1.0 - theta) * r_t * r_t + theta * sigma2_t


def next_variance(spec: VolModelSpec, sigma2_t: float, eps_t: float) -> float:
    return float(_step(spec.family.code, spec.vector(), eps_t, sigma2_t))


def variance_path(spec: VolModelSpec, returns, sigma2_0: float) -> np.ndarray:
    """Conditional variances for each observation plus the one-step forecast."""
    eps = np.ascontiguousarray(returns, dtype=float) - spec.mean
    return _variance_path(spec.family.code, spec.vector(), eps, float(sigma2_0))


def loglik(spec: VolModelSpec, returns, sigma2_0: float | None = None) -> float:
    r = np.ascontiguousarray(returns, dtype=float)
    s0 = float(np.var(r)) if sigma2_0 is None else sigma2_0
    nu, lam = spec.dist.shape
    v = _nll(spec.family.code, spec.dist.kind.code, spec.mean, spec.vector(), nu, lam, r, s0)
    return -v


# ---------------------------------------------------------------------------
# parameter transforms


def _simplex_slack(x):
    """Map logits to positive weights whose sum stays below one."""
    m = max(0.0, max(x))
    e = [math.exp(v - m) for v in x]
    d = math.exp(-m) + sum(e)
    return [v / d for v in e]


def _to_params(family: Family, free) -> dict:
    if family is Family.GARCH11:
        a, b = _simplex_slack(free[1:3])
        return {"omega": math.exp(free[0]), "alpha": float(a), "beta": float(b)}
    if family is Family.GJRGARCH11:
        a, g, b = _simplex_slack(free[1:4])
        return {"omega": math.exp(free[0]), "alpha": float(a), "gamma": 2.0 * float(g),
                "beta": float(b)}
    if family is Family.EGARCH11:
        return {"omega": float(free[0]), "alpha": float(free[1]), "gamma": float(free[2]),
                "beta": math.tanh(free[3])}
    raise DomainError(f"{family.value} has no free variance parameters")


def _from_params(family: Family, p: dict) -> list[float]:
    if family is Family.EGARCH11:
        return [p["omega"], p["alpha"], p["gamma"], math.atanh(p["beta"])]
    if family is Family.GARCH11:
        w = [p["alpha"], p["beta"]]
    else:
        w = [p["alpha"], p["gamma"] / 2.0, p["beta"]]
    w = [max(v, 1e-8) for v in w]
    slack = max(1.0 - sum(w), 1e-8)
    return [math.log(p["omega"])] + [math.log(v / slack) for v in w]


def _default_params(family: Family, var: float) -> dict:
    if family is Family.GARCH11:
        return {"omega": 0.05 * var, "alpha": 0.08, "beta": 0.87}
    if family is Family.GJRGARCH11:
        return {"omega": 0.05 * var, "alpha": 0.05, "gamma": 0.06, "beta": 0.87}
    return {"omega": 0.05 * math.log(var) - 0.08, "alpha": 0.1, "gamma": 0.0, "beta": 0.95}


def _bounds(family: Family, var: float, kind: DistKind) -> list:
    lv = math.log(var)
    if family is Family.EGARCH11:
        vb = [(-10.0 + min(lv, 0), 10.0 + max(lv, 0)), (-5.0, 5.0), (-5.0, 5.0), (-4.0, 4.0)]
    else:
        vb = [(lv - 20.0, lv + 3.0)] + [(-25.0, 25.0)] * (2 if family is Family.GARCH11 else 3)
    return vb + SHAPE_BOUNDS[kind]


# ---------------------------------------------------------------------------
# fitting


def fit_garch_family(
    window,
    family: Family | str,
    dist_kind: DistKind | str = DistKind.NORMAL,
    *,
    seed: int = 0,
    n_starts: int = 3,
    warm_start: np.ndarray | None = None,
    theta: float = RISKMETRICS_THETA,
) -> VolFit:
    """Constant-mean MLE of a GARCH-family model on ``window``.

    The variance recursion starts at the sample variance of the window. With
    ``warm_start`` (free coordinates of a previous fit) a single local search
    is run from there; otherwise the default start plus ``n_starts`` jittered
    starts are tried and the best optimum kept. EWMA keeps ``theta`` fixed and
    only estimates the mean.
    """
    family = Family(family)
    kind = DistKind(dist_kind)
    r = np.ascontiguousarray(getattr(window, "returns", window), dtype=float)
    if r.size < MIN_WINDOW:
        raise InsufficientDataError(f"need at least {MIN_WINDOW} observations, got {r.size}")
    var = float(np.var(r))
    if not var > 0 or np.ptp(r) == 0:
        raise FittingError("degenerate variance: constant window", state={"best": None})
    if family is Family.EWMA:
        if kind is not DistKind.NORMAL:
            raise DomainError("EWMA is defined with normal innovations only")
        spec = VolModelSpec(family, DistributionSpec(kind), {"theta": theta}, float(r.mean()))
        return _finish(spec, r, var, np.array([spec.mean]), None)

    nv = len(PARAM_NAMES[family])
    bounds = [(None, None)] + _bounds(family, var, kind)
    lo = np.array([-np.inf if b[0] is None else b[0] for b in bounds])
    hi = np.array([np.inf if b[1] is None else b[1] for b in bounds])

    def objective(free):
        return _free_nll_grad(family.code, kind.code, free, r, var, hi)

    if warm_start is not None:
        starts = [np.clip(np.asarray(warm_start, dtype=float), lo, hi)]
    else:
        base = np.array([r.mean()] + _from_params(family, _default_params(family, var))
                        + shape_start(kind))
        rng = np.random.default_rng(seed)
        starts = [base]
        for _ in range(n_starts):
            jitter = base.copy()
            jitter[0] += rng.normal(0, 0.1 * math.sqrt(var))
            jitter[1:] += rng.normal(0, 0.3, base.size - 1)
            starts.append(np.clip(jitter, lo, hi))

    best = None
    for s0 in starts:
        res = optimize.minimize(objective, s0, method="L-BFGS-B", jac=True, bounds=bounds,
                                options={"gtol": 1e-8, "maxiter": 400})
        if best is None or res.fun < best.fun:
            best = res
    if best.fun >= _BIG:
        raise FittingError(f"{family.value}-{kind.value}: no finite likelihood found",
                           state={"best": best.x})

    warning = None
    free = best.x
    at_edge = np.isclose(free, lo) | np.isclose(free, hi)
    if np.any(at_edge[1:1 + nv]):
        warning = "projected to feasible boundary"
        warnings.warn(f"{family.value}-{kind.value}: optimum on parameter boundary", RuntimeWarning)
    params = _to_params(family, free[1:1 + nv])
    nu, lam = shape_from_free(kind, free[1 + nv:])
    dist = DistributionSpec(kind, nu=nu if kind is not DistKind.NORMAL else None,
                            lam=lam if kind is DistKind.SKEW_T else None)
    spec = VolModelSpec(family, dist, params, float(free[0]))
    return _finish(spec, r, var, free, warning)


def _finish(spec: VolModelSpec, r: np.ndarray, s0: float, free, warning) -> VolFit:
    path = variance_path(spec, r, s0)
    state = VolState(float(path[-2]), float(r[-1] - spec.mean), float(r[-1]))
    ll = loglik(spec, r, s0)
    return VolFit(spec, state, ll, np.asarray(free, dtype=float), warning)


def refilter(fit: VolFit, window) -> VolFit:
    """Run an existing fit's recursion over a new window without re-estimating."""
    r = np.ascontiguousarray(getattr(window, "returns", window), dtype=float)
    var = float(np.var(r))
    if not var > 0:
        raise FittingError("degenerate variance: constant window", state={"best": None})
    return _finish(fit.spec, r, var, fit.free, "reused previous parameters")


def forecast_var_es(spec: VolModelSpec, state: VolState, alpha: float, **meta) -> RiskForecast:
    """One-step-ahead VaR/ES from the last in-sample state."""
    s2 = next_variance(spec, state.sigma2, state.eps)
    if not (s2 > 0) or not math.isfinite(s2):
        raise InvariantError(f"non-positive one-step variance {s2} for {spec}")
    te = var_es(spec.dist, spec.mean, math.sqrt(s2), alpha)
    return RiskForecast(te.var, te.es, alpha, **meta)


def simulate(spec: VolModelSpec, n: int, seed: int = 0, burn: int = 500) -> np.ndarray:
    """Simulate returns from a fitted/specified model (normal or t innovations)."""
    rng = np.random.default_rng(seed)
    kind = spec.dist.kind
    if kind is DistKind.NORMAL:
        z = rng.standard_normal(n + burn)
    elif kind is DistKind.STUDENT_T:
        nu = spec.dist.nu
        z = rng.standard_t(nu, n + burn) * math.sqrt((nu - 2) / nu)
    else:
        raise DomainError("simulation supports normal and t innovations")
    vp = spec.vector()
    if spec.family is Family.GARCH11:
        s2 = vp[0] / max(1 - vp[1] - vp[2], 1e-6)
    elif spec.family is Family.GJRGARCH11:
        s2 = vp[0] / max(1 - vp[1] - vp[2] / 2 - vp[3], 1e-6)
    elif spec.family is Family.EGARCH11:
        s2 = math.exp(vp[0] / (1 - vp[3]))
    else:
        s2 = 1.0
    out = np.empty(n + burn)
    for t in range(n + burn):
        eps = math.sqrt(s2) * z[t]
        out[t] = spec.mean + eps
        s2 = _step(spec.family.code, vp, eps, s2)
    return out[burn:]
