"""Compiled recursions and objectives for the quantile-type models.

Form codes
    CAViaR: 0 SAV, 1 AS, 2 IG, 3 ADA
    CARE:   0 SAV, 1 AS, 2 IG
    ES connection: 0 EXP, 1 AR

Paths have ``n + 1`` entries for ``n`` returns: entry ``t`` is the value for
return ``t`` and the final entry is the one-step-ahead forecast.
"""

import math

import numpy as np
from numba import njit

BIG = 1e100


@njit(cache=True)
def caviar_next(form, b, v, r_prev, alpha, g):
    if form == 0:
        return b[0] + b[1] * v + b[2] * abs(r_prev)
    if form == 1:
        return b[0] + b[1] * v + b[2] * max(r_prev, 0.0) - b[3] * min(r_prev, 0.0)
    if form == 2:
        inner = b[0] + b[1] * v * v + b[2] * r_prev * r_prev
        if inner < 0.0:
            return math.nan
        return -math.sqrt(inner)
    z = g * (r_prev - v)
    if z > 700.0:
        z = 700.0
    return v + b[0] * (1.0 / (1.0 + math.exp(z)) - alpha)


@njit(cache=True)
def caviar_path(form, b, r, v0, alpha, g):
    n = r.size
    v = np.empty(n + 1)
    v[0] = v0
    for t in range(1, n + 1):
        v[t] = caviar_next(form, b, v[t - 1], r[t - 1], alpha, g)
    return v


@njit(cache=True)
def quantile_loss_mean(r, v, alpha):
    s = 0.0
    for t in range(r.size):
        u = r[t] - v[t]
        s += u * (alpha - (1.0 if u < 0.0 else 0.0))
    return s / r.size


@njit(cache=True)
def es_path(conn, gam, r, v, x0):
    """ES companion of a VaR path ``v`` (length ``r.size + 1``)."""
    n = r.size
    es = np.empty(n + 1)
    if conn == 0:
        m = 1.0 + math.exp(min(gam[0], 700.0))
        for t in range(n + 1):
            es[t] = m * v[t]
        return es
    x = x0
    es[0] = v[0] - x
    for t in range(1, n + 1):
        if r[t - 1] <= v[t - 1]:
            x = gam[0] + gam[1] * (v[t - 1] - r[t - 1]) + gam[2] * x
        es[t] = v[t] - x
    return es


@njit(cache=True)
def al_score_mean(r, v, es, alpha):
    s = 0.0
    for t in range(r.size):
        if not es[t] < 0.0:
            return BIG
        hit = 1.0 if r[t] <= v[t] else 0.0
        s += -math.log((alpha - 1.0) / es[t]) - (r[t] - v[t]) * (alpha - hit) / (alpha * es[t])
    return s / r.size


@njit(cache=True)
def caviar_es_score(form, conn, b, gam, r, v0, alpha, g, x0):
    """Mean AL score of the CAViaR-ES pair in one pass (no path arrays)."""
    v = v0
    x = x0
    m = 1.0 + math.exp(min(gam[0], 700.0))
    s = 0.0
    for t in range(r.size):
        if not math.isfinite(v):
            return BIG
        es = m * v if conn == 0 else v - x
        if not es < 0.0:
            return BIG
        hit = 1.0 if r[t] <= v else 0.0
        s += -math.log((alpha - 1.0) / es) - (r[t] - v) * (alpha - hit) / (alpha * es)
        if conn == 1 and r[t] <= v:
            x = gam[0] + gam[1] * (v - r[t]) + gam[2] * x
        v = caviar_next(form, b, v, r[t], alpha, g)
    if not math.isfinite(v):
        return BIG
    return s / r.size


@njit(cache=True)
def care_path(form, b, r, mu0):
    n = r.size
    m = np.empty(n + 1)
    m[0] = mu0
    for t in range(1, n + 1):
        rp = r[t - 1]
        if form == 0:
            m[t] = b[0] + b[1] * m[t - 1] + b[2] * abs(rp)
        elif form == 1:
            slope = b[2] if rp > 0.0 else (b[3] if rp < 0.0 else 0.0)
            m[t] = b[0] + b[1] * m[t - 1] + slope * abs(rp)
        else:
            inner = b[0] + b[1] * m[t - 1] * m[t - 1] + b[2] * rp * rp
            if inner < 0.0:
                m[t] = math.nan
            else:
                m[t] = -math.sqrt(inner)
    return m


@njit(cache=True)
def als_loss_mean(r, m, tau):
    s = 0.0
    for t in range(r.size):
        u = r[t] - m[t]
        w = 1.0 - tau if u < 0.0 else tau
        s += w * u * u
    return s / r.size


@njit(cache=True)
def softmax(x):
    m = x.max()
    e = np.exp(x - m)
    return e / e.sum()


@njit(cache=True)
def combo_score(beta, gam, V, E, r, alpha, penalty):
    """Mean AL score of a convex combination plus exterior crossing penalty."""
    T = r.size
    viol = 0.0
    s = 0.0
    for t in range(T):
        v = 0.0
        for i in range(beta.size):
            v += beta[i] * V[t, i]
        e = 0.0
        for j in range(gam.size):
            e += gam[j] * E[t, j]
        if not e < 0.0:
            return BIG
        if e - v > viol:
            viol = e - v
        hit = 1.0 if r[t] <= v else 0.0
        s += -math.log((alpha - 1.0) / e) - (r[t] - v) * (alpha - hit) / (alpha * e)
    return s / T + penalty * viol


@njit(cache=True)
def _explosive(form, b):
    """Autoregressive coefficient outside the stable region (ADA has none)."""
    if form == 3:
        return False
    return abs(b[1]) >= 1.0


@njit(cache=True)
def objective(code, x, r, M, fpar, ipar):
    """Single entry point so the simplex search compiles once and caches.

    code 0: CAViaR quantile loss        fpar=(v0, alpha, G)       ipar=(form,)
    code 1: CAViaR-ES AL score          fpar=(v0, alpha, G, x0)   ipar=(form, conn, nb)
    code 2: CARE asymmetric LS          fpar=(mu0, tau)           ipar=(form,)
    code 3: joint combination AL score  fpar=(alpha, penalty)     ipar=(n, h); M=[V | E]

    Recursions with an autoregressive coefficient of modulus >= 1 are
    treated as infeasible.
    """
    if code == 0:
        form = ipar[0]
        if _explosive(form, x):
            return BIG
        if form == 2:
            for k in range(3):
                if x[k] <= 0.0:
                    return BIG
        v = caviar_path(form, x, r, fpar[0], fpar[1], fpar[2])
        for t in range(v.size):
            if not math.isfinite(v[t]):
                return BIG
        return quantile_loss_mean(r, v, fpar[1])
    if code == 1:
        form = ipar[0]
        conn = ipar[1]
        nb = ipar[2]
        b = x[:nb]
        gam = x[nb:]
        if _explosive(form, b):
            return BIG
        if form == 2:
            for k in range(3):
                if b[k] <= 0.0:
                    return BIG
        if conn == 1:
            for k in range(gam.size):
                if gam[k] < 0.0:
                    return BIG
        return caviar_es_score(form, conn, b, gam, r, fpar[0], fpar[1], fpar[2], fpar[3])
    if code == 2:
        form = ipar[0]
        if abs(x[1]) >= 1.0:
            return BIG
        if form == 2:
            for k in range(3):
                if x[k] <= 0.0:
                    return BIG
        m = care_path(form, x, r, fpar[0])
        for t in range(m.size):
            if not math.isfinite(m[t]):
                return BIG
        return als_loss_mean(r, m, fpar[1])
    n = ipar[0]
    h = ipar[1]
    beta = softmax(x[:n])
    gam = softmax(x[n:n + h])
    return combo_score(beta, gam, M[:, :n], M[:, n:n + h], r, fpar[0], fpar[1])


@njit(cache=True)
def nelder_mead(code, x0, step, r, M, fpar, ipar, max_evals, xtol, ftol):
    """Standard Nelder-Mead (reflection 1, expansion 2, contraction 1/2).

    Stops when both the simplex diameter (sup norm) and the spread of function
    values fall below ``xtol`` / ``ftol``, or after ``max_evals`` evaluations.
    """
    n = x0.size
    sim = np.empty((n + 1, n))
    fs = np.empty(n + 1)
    sim[0] = x0
    fs[0] = objective(code, x0, r, M, fpar, ipar)
    for i in range(n):
        x = x0.copy()
        x[i] += step[i]
        sim[i + 1] = x
        fs[i + 1] = objective(code, x, r, M, fpar, ipar)
    nev = n + 1
    while nev < max_evals:
        order = np.argsort(fs)
        sim = sim[order]
        fs = fs[order]
        if np.max(np.abs(sim[1:] - sim[0])) <= xtol and fs[-1] - fs[0] <= ftol:
            break
        c = np.zeros(n)
        for i in range(n):
            c += sim[i]
        c /= n
        xr = 2.0 * c - sim[n]
        fr = objective(code, xr, r, M, fpar, ipar)
        nev += 1
        if fr < fs[0]:
            xe = 3.0 * c - 2.0 * sim[n]
            fe = objective(code, xe, r, M, fpar, ipar)
            nev += 1
            if fe < fr:
                sim[n] = xe
                fs[n] = fe
            else:
                sim[n] = xr
                fs[n] = fr
        elif fr < fs[n - 1]:
            sim[n] = xr
            fs[n] = fr
        else:
            if fr < fs[n]:
                xc = c + 0.5 * (xr - c)
                fc = objective(code, xc, r, M, fpar, ipar)
                nev += 1
                accept = fc <= fr
            else:
                xc = c + 0.5 * (sim[n] - c)
                fc = objective(code, xc, r, M, fpar, ipar)
                nev += 1
                accept = fc < fs[n]
            if accept:
                sim[n] = xc
                fs[n] = fc
            else:
                for i in range(1, n + 1):
                    sim[i] = sim[0] + 0.5 * (sim[i] - sim[0])
                    fs[i] = objective(code, sim[i], r, M, fpar, ipar)
                    nev += 1
    j = np.argmin(fs)
    return sim[j].copy(), fs[j], nev
