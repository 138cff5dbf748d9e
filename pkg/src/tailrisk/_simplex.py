import numpy as np

from ._kernels import nelder_mead

_EMPTY_M = np.zeros((0, 0))


def simplex_search(code, x0, r, *, fpar=(), ipar=(), M=None, step=None,
                   max_evals=10_000, xtol=1e-7, ftol=1e-10, restarts=3):
    """Nelder-Mead with fresh-simplex restarts at the incumbent.

    Restarts stop as soon as one fails to improve; the evaluation cap covers
    the initial run and all restarts together.
    """
    x0 = np.ascontiguousarray(x0, dtype=float)
    r = np.ascontiguousarray(r, dtype=float)
    M = _EMPTY_M if M is None else np.ascontiguousarray(M, dtype=float)
    fpar = np.asarray(fpar, dtype=float)
    ipar = np.asarray(ipar, dtype=np.int64)
    if step is None:
        step = np.where(x0 != 0.0, 0.05 * np.abs(x0), 0.00025)
    step = np.asarray(step, dtype=float)
    x, f, used = nelder_mead(code, x0, step, r, M, fpar, ipar, max_evals, xtol, ftol)
    for _ in range(restarts):
        budget = max_evals - used
        if budget <= x.size + 1:
            break
        s = np.where(x != 0.0, 0.02 * np.abs(x), 0.00025)
        x2, f2, n2 = nelder_mead(code, x, s, r, M, fpar, ipar, budget, xtol, ftol)
        used += n2
        if not f2 < f - 1e-13:
            if f2 < f:
                x, f = x2, f2
            break
        x, f = x2, f2
    return x, float(f), int(used)
