"""Innovation distributions, their VaR/ES estimators and shape-parameter MLE.

All VaR/ES values follow the lower-tail convention: for ``alpha < 0.5`` both
are below the location ``mu`` and ``es < var``.

The Student-t used throughout is the *standardised* t (unit variance), and
the skewed t is Hansen's (1994) construction, also with zero mean and unit
variance.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import optimize, special

from .errors import (
    ConvergenceError,
    DomainError,
    FittingError,
    InsufficientDataError,
    UnsupportedLevelError,
)

NU_MIN = 2.05
NU_MAX = 100.0
LAMBDA_MAX = 0.99


class DistKind(str, enum.Enum):
    NORMAL = "normal"
    STUDENT_T = "t"
    SKEW_T = "skt"
    LAPLACE = "laplace"
    ASYMMETRIC_LAPLACE = "al"

    @property
    def code(self) -> int:
        return _KIND_CODES[self]


_KIND_CODES = {
    DistKind.NORMAL: 0,
    DistKind.STUDENT_T: 1,
    DistKind.SKEW_T: 2,
    DistKind.LAPLACE: 3,
    DistKind.ASYMMETRIC_LAPLACE: 4,
}


@dataclass(frozen=True)
class DistributionSpec:
    kind: DistKind
    nu: float | None = None
    lam: float | None = None

    def __post_init__(self):
        kind = DistKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind in (DistKind.STUDENT_T, DistKind.SKEW_T):
            if self.nu is None or not (NU_MIN < self.nu <= NU_MAX):
                raise DomainError(f"nu must lie in ({NU_MIN}, {NU_MAX}], got {self.nu}")
        elif self.nu is not None:
            raise DomainError(f"{kind.value} takes no nu parameter")
        if kind is DistKind.SKEW_T:
            if self.lam is None or not (-LAMBDA_MAX < self.lam < LAMBDA_MAX):
                raise DomainError(f"lambda must lie in (-0.99, 0.99), got {self.lam}")
        elif self.lam is not None:
            raise DomainError(f"{kind.value} takes no lambda parameter")

    @property
    def shape(self) -> tuple[float, float]:
        """(nu, lambda) with neutral fill-ins, as consumed by the kernels."""
        return (self.nu if self.nu is not None else 0.0,
                self.lam if self.lam is not None else 0.0)


@dataclass(frozen=True)
class TailEstimate:
    var: float
    es: float
    alpha: float


def _check_alpha(alpha: float) -> None:
    if not (0.0 < alpha < 0.5):
        raise DomainError(f"alpha must lie in (0, 0.5), got {alpha}")


def _check_sigma(sigma: float) -> None:
    if not (sigma > 0.0) or not math.isfinite(sigma):
        raise DomainError(f"sigma must be positive and finite, got {sigma}")


# ---------------------------------------------------------------------------
# Normal and standardised t


def var_es_normal(mu: float, sigma: float, alpha: float) -> TailEstimate:
    _check_alpha(alpha)
    _check_sigma(sigma)
    q = special.ndtri(alpha)
    pdf = math.exp(-0.5 * q * q) / math.sqrt(2.0 * math.pi)
    return TailEstimate(float(mu + sigma * q), float(mu - sigma * pdf / alpha), alpha)


def std_t_quantile(alpha: float, nu: float) -> float:
    """Quantile of the unit-variance Student-t."""
    return float(special.stdtrit(nu, alpha)) * math.sqrt((nu - 2.0) / nu)


def _t_pdf(x: float, nu: float) -> float:
    lg = math.lgamma((nu + 1) / 2) - math.lgamma(nu / 2)
    return math.exp(lg - 0.5 * math.log(nu * math.pi) - (nu + 1) / 2 * math.log1p(x * x / nu))


def var_es_student_t(mu: float, sigma: float, nu: float, alpha: float) -> TailEstimate:
    _check_alpha(alpha)
    _check_sigma(sigma)
    if not nu > 2.0:
        raise DomainError(f"nu must exceed 2 (finite variance), got {nu}")
    q = float(special.stdtrit(nu, alpha))
    scale = math.sqrt((nu - 2.0) / nu)
    tail = _t_pdf(q, nu) / alpha * (nu + q * q) / (nu - 1.0)
    return TailEstimate(float(mu + sigma * q * scale), float(mu - sigma * tail * scale), alpha)


# ---------------------------------------------------------------------------
# Hansen skewed t


def skewt_constants(nu: float, lam: float) -> tuple[float, float, float]:
    """Return (a, b, c) of the Hansen skewed t."""
    c = math.exp(math.lgamma((nu + 1) / 2) - math.lgamma(nu / 2)) / math.sqrt(math.pi * (nu - 2))
    a = 4.0 * lam * c * (nu - 2) / (nu - 1)
    b = math.sqrt(1.0 + 3.0 * lam * lam - a * a)
    return a, b, c


def skewt_pdf(z, nu: float, lam: float):
    a, b, c = skewt_constants(nu, lam)
    z = np.asarray(z, dtype=float)
    side = np.where(z < -a / b, 1.0 - lam, 1.0 + lam)
    u = (b * z + a) / side
    return b * c * (1.0 + u * u / (nu - 2)) ** (-(nu + 1) / 2)


def skewt_cdf_branches(z, nu: float, lam: float):
    """Both CDF branches evaluated at ``z`` (left valid below ``-a/b``)."""
    a, b, _ = skewt_constants(nu, lam)
    z = np.asarray(z, dtype=float)
    k = math.sqrt(nu / (nu - 2))
    left = (1 - lam) * special.stdtr(nu, k * (b * z + a) / (1 - lam))
    right = (1 - lam) / 2 + (1 + lam) * (special.stdtr(nu, k * (b * z + a) / (1 + lam)) - 0.5)
    return left, right


def skewt_cdf(z, nu: float, lam: float):
    a, b, _ = skewt_constants(nu, lam)
    left, right = skewt_cdf_branches(z, nu, lam)
    return np.where(np.asarray(z) < -a / b, left, right)


def skewt_ppf(p: float, nu: float, lam: float, tol: float = 1e-10) -> float:
    """Quantile by bisection of the CDF on [-50, 50]."""
    if not (0.0 < p < 1.0):
        raise DomainError(f"probability must lie in (0, 1), got {p}")
    lo, hi = -50.0, 50.0
    flo, fhi = float(skewt_cdf(lo, nu, lam)), float(skewt_cdf(hi, nu, lam))
    if not (flo <= p <= fhi):
        raise ConvergenceError(
            "skew-t quantile outside bisection bracket",
            state={"lo": lo, "hi": hi, "cdf_lo": flo, "cdf_hi": fhi, "p": p},
        )
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if skewt_cdf(mid, nu, lam) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def skewt_partial_mean(q: float, nu: float, lam: float) -> float:
    """``E[Z 1{Z < q}]`` for the standard skewed t, in closed form."""
    a, b, c = skewt_constants(nu, lam)
    knot = -a / b
    expo = (1.0 - nu) / 2.0
    coef = (nu - 2.0) / (1.0 - nu)

    def piece(upper_u: float, side: float) -> float:
        # integral of u (1 + u^2/(nu-2))^{-(nu+1)/2} from -inf or 0 handled by caller
        return c * side * side / b * coef * (1.0 + upper_u * upper_u / (nu - 2.0)) ** expo

    k = math.sqrt(nu / (nu - 2))
    if q < knot:
        u = (b * q + a) / (1 - lam)
        mass = (1 - lam) * special.stdtr(nu, k * u)
        return piece(u, 1 - lam) - a / b * mass
    # full left branch up to the knot (u = 0) plus right branch from 0 to u
    left = piece(0.0, 1 - lam) - a / b * (1 - lam) / 2
    u = (b * q + a) / (1 + lam)
    mass_right = (1 + lam) * (special.stdtr(nu, k * u) - 0.5)
    right = piece(u, 1 + lam) - piece(0.0, 1 + lam) - a / b * mass_right
    return left + right


def var_es_skew_t(mu: float, sigma: float, nu: float, lam: float, alpha: float) -> TailEstimate:
    _check_alpha(alpha)
    _check_sigma(sigma)
    if not nu > 2.0:
        raise DomainError(f"nu must exceed 2, got {nu}")
    if not -1.0 < lam < 1.0:
        raise DomainError(f"lambda must lie in (-1, 1), got {lam}")
    q = skewt_ppf(alpha, nu, lam)
    tail = skewt_partial_mean(q, nu, lam) / alpha
    return TailEstimate(float(mu + sigma * q), float(mu + sigma * tail), alpha)


def var_es(spec: DistributionSpec, mu: float, sigma: float, alpha: float) -> TailEstimate:
    """Dispatch on ``spec.kind``; Laplace laws have no closed estimator here."""
    if spec.kind is DistKind.NORMAL:
        return var_es_normal(mu, sigma, alpha)
    if spec.kind is DistKind.STUDENT_T:
        return var_es_student_t(mu, sigma, spec.nu, alpha)
    if spec.kind is DistKind.SKEW_T:
        return var_es_skew_t(mu, sigma, spec.nu, spec.lam, alpha)
    raise DomainError(f"no VaR/ES estimator for {spec.kind.value}")


# ---------------------------------------------------------------------------
# Asymmetric Laplace machinery (score and simulation only)


def al_log_density(r, var, es, alpha: float):
    """Log density of Taylor's asymmetric Laplace with quantile ``var`` and
    tail mean ``es`` (requires ``es < 0``)."""
    r, var, es = (np.asarray(v, dtype=float) for v in (r, var, es))
    hit = (r <= var).astype(float)
    return np.log((alpha - 1.0) / es) + (r - var) * (alpha - hit) / (alpha * es)


def standard_laplace(rng: np.random.Generator, size) -> np.ndarray:
    """Laplace(0, 1) draws (location 0, scale 1, variance 2)."""
    return rng.laplace(0.0, 1.0, size)


# ---------------------------------------------------------------------------
# Log densities for likelihoods (numba kernels shared with the volatility module)


@njit(cache=True)
def logpdf_consts(code, nu, lam):
    """Shape-only terms of the log density: (log normaliser, a, b)."""
    if code == 0:
        return -0.5 * math.log(2.0 * math.pi), 0.0, 1.0
    lg = math.lgamma((nu + 1.0) / 2.0) - math.lgamma(nu / 2.0)
    if code == 1:
        return lg - 0.5 * math.log(math.pi * (nu - 2.0)), 0.0, 1.0
    c = math.exp(lg) / math.sqrt(math.pi * (nu - 2.0))
    a = 4.0 * lam * c * (nu - 2.0) / (nu - 1.0)
    b = math.sqrt(1.0 + 3.0 * lam * lam - a * a)
    return math.log(b * c), a, b


@njit(cache=True)
def logpdf_core(code, z, nu, lam, k0, a, b):
    if code == 0:
        return k0 - 0.5 * z * z
    if code == 1:
        return k0 - (nu + 1.0) / 2.0 * math.log1p(z * z / (nu - 2.0))
    side = 1.0 - lam if z < -a / b else 1.0 + lam
    u = (b * z + a) / side
    return k0 - (nu + 1.0) / 2.0 * math.log1p(u * u / (nu - 2.0))


@njit(cache=True)
def std_logpdf(code, z, nu, lam):
    """Log density of the unit-variance innovation law ``code`` at ``z``."""
    k0, a, b = logpdf_consts(code, nu, lam)
    return logpdf_core(code, z, nu, lam, k0, a, b)


@njit(cache=True)
def _iid_nll(code, x, mu, sigma, nu, lam):
    s = 0.0
    ls = math.log(sigma)
    k0, a, b = logpdf_consts(code, nu, lam)
    for i in range(x.size):
        s -= logpdf_core(code, (x[i] - mu) / sigma, nu, lam, k0, a, b) - ls
    return s


def shape_from_free(kind: DistKind, free) -> tuple[float, float]:
    """Map unconstrained shape coordinates to (nu, lambda)."""
    nu = lam = 0.0
    if kind in (DistKind.STUDENT_T, DistKind.SKEW_T):
        nu = min(NU_MIN + math.exp(free[0]), NU_MAX)
    if kind is DistKind.SKEW_T:
        lam = math.tanh(free[1])
    return nu, lam


SHAPE_BOUNDS = {
    DistKind.NORMAL: [],
    DistKind.STUDENT_T: [(-6.0, math.log(NU_MAX - NU_MIN))],
    DistKind.SKEW_T: [(-6.0, math.log(NU_MAX - NU_MIN)), (-math.atanh(LAMBDA_MAX), math.atanh(LAMBDA_MAX))],
}


def shape_start(kind: DistKind, rng: np.random.Generator | None = None) -> list[float]:
    """Default free shape coordinates (nu = 8, lambda = 0), optionally jittered."""
    base = {DistKind.NORMAL: [], DistKind.STUDENT_T: [math.log(6.0)],
            DistKind.SKEW_T: [math.log(6.0), 0.0]}[kind]
    if rng is None:
        return list(base)
    return [v + rng.normal(0.0, 0.5) for v in base]


# finite stand-in for an undefined likelihood (keeps the line search stable)
_FAIL = 1e12


def fit_distribution(residuals, kind: DistKind | str, seed: int = 0) -> DistributionSpec:
    """Maximum-likelihood shape parameters of a location-scale family.

    Location and scale are estimated jointly and discarded; only the shape
    (nu, lambda) is returned. Three jittered starts are tried on top of the
    default one.
    """
    kind = DistKind(kind)
    x = np.ascontiguousarray(residuals, dtype=float)
    if x.size < 100:
        raise InsufficientDataError("fit_distribution needs at least 100 observations")
    if kind is DistKind.NORMAL:
        return DistributionSpec(kind)
    if kind not in SHAPE_BOUNDS:
        raise DomainError(f"fitting not supported for {kind.value}")
    sd = float(x.std())
    if sd <= 0:
        raise FittingError("constant sample", state={"best": None})
    m0 = float(np.median(x))

    def nll(p):
        nu, lam = shape_from_free(kind, p[2:])
        v = _iid_nll(kind.code, x, p[0], math.exp(p[1]), nu, lam)
        return v if math.isfinite(v) else _FAIL

    bounds = [(None, None), (math.log(sd) - 5, math.log(sd) + 5)] + SHAPE_BOUNDS[kind]
    rng = np.random.default_rng(seed)
    starts = [np.array([m0, math.log(sd)] + shape_start(kind))]
    starts += [np.array([m0, math.log(sd)] + shape_start(kind, rng)) for _ in range(3)]
    best = None
    for s0 in starts:
        s0 = np.clip(s0, [b[0] if b[0] is not None else -np.inf for b in bounds],
                     [b[1] if b[1] is not None else np.inf for b in bounds])
        res = optimize.minimize(nll, s0, method="L-BFGS-B", bounds=bounds,
                                options={"gtol": 1e-8, "maxiter": 500})
        if best is None or res.fun < best.fun:
            best = res
    if best is None or not math.isfinite(best.fun) or best.fun >= _FAIL:
        raise FittingError("distribution MLE failed", state={"best": None if best is None else best.x})
    nu, lam = shape_from_free(kind, best.x[2:])
    return DistributionSpec(kind, nu=nu, lam=lam if kind is DistKind.SKEW_T else None)


# ---------------------------------------------------------------------------
# Nominal ES backtesting levels

_NOMINAL = {
    # column: (alpha=0.01, alpha=0.05)
    "normal": (0.0038, 0.0196),
    "al": (0.0037, 0.0184),
    "t10": (0.0036, 0.0184),
    "t6": (0.0034, 0.0175),
    "t4": (0.0032, 0.0164),
    "skt6": (0.0034, 0.0175),
    "skt4": (0.0032, 0.0164),
    "semiparametric": (0.0036, 0.018),
}
NONPARAMETRIC = "nonparametric"
SEMIPARAMETRIC = "semiparametric"
DEFAULT_TABLE_NU = 4


def nominal_es_level(kind, nu: float | None = None, alpha: float = 0.05) -> float:
    """Quantile level at which an ES series is backtested as if it were VaR.

    ``kind`` is a :class:`DistKind` for parametric models or one of the strings
    ``"semiparametric"`` / ``"nonparametric"``. For t and skewed-t laws the
    nearest tabulated degree of freedom (4, 6, 10) is used; when ``nu`` is
    omitted the value 4 is assumed.
    """
    try:
        col_alpha = {0.01: 0, 0.05: 1}[alpha]
    except KeyError:
        raise UnsupportedLevelError(f"alpha must be 0.01 or 0.05, got {alpha}") from None
    if kind in (NONPARAMETRIC, SEMIPARAMETRIC):
        return _NOMINAL["semiparametric"][col_alpha]
    try:
        kind = DistKind(kind)
    except ValueError:
        raise UnsupportedLevelError(f"unknown model kind {kind!r}") from None
    if kind is DistKind.NORMAL:
        col = "normal"
    elif kind in (DistKind.LAPLACE, DistKind.ASYMMETRIC_LAPLACE):
        col = "al"
    else:
        dof = DEFAULT_TABLE_NU if nu is None else nu
        choices = (4, 6, 10) if kind is DistKind.STUDENT_T else (4, 6)
        near = min(choices, key=lambda d: (abs(d - dof), d))
        col = ("t" if kind is DistKind.STUDENT_T else "skt") + str(near)
    return _NOMINAL[col][col_alpha]
