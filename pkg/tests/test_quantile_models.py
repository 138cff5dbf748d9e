import math

import mpmath
import numpy as np
import pytest

from tailrisk import quantile_models as qm
from tailrisk.errors import DomainError, InsufficientDataError


def test_hs_example_from_sorted_window():
    window = np.concatenate([[-5, -4, -3, -2, -1], np.linspace(0, 9, 95)])
    np.random.default_rng(0).shuffle(window)
    f = qm.hs_forecast(window, 0.05)
    assert f.var == -1.0
    assert f.es == -3.5


def test_hs_all_equal_window_uses_fallback():
    f = qm.hs_forecast(np.full(40, -0.7), 0.05)
    assert f.var == -0.7 and f.es == -0.7


def test_hs_window_too_short():
    with pytest.raises(InsufficientDataError):
        qm.hs_forecast(np.arange(10.0), 0.05)


def test_hs_matches_brute_force():
    rng = np.random.default_rng(1)
    for n in (20, 100, 168, 333):
        w = rng.standard_t(4, n)
        for a in (0.01, 0.05):
            if n < 1 / a:
                continue
            s = np.sort(w)
            var = s[math.ceil(a * n) - 1]
            f = qm.hs_forecast(w, a)
            assert f.var == var
            below = [x for x in w if x < var] or [x for x in w if x <= var]
            assert f.es == pytest.approx(sum(below) / len(below), abs=1e-12)


def test_sav_identity_recursion_is_constant():
    r = np.random.default_rng(2).standard_normal(50)
    path = qm.caviar_path(qm.CaviarSpec("SAV", (0.0, 1.0, 0.0)), r, -1.3)
    assert np.all(path == -1.3)


def test_ig_identity_recursion_restores_sign():
    r = np.random.default_rng(3).standard_normal(50)
    path = qm.caviar_path(qm.CaviarSpec("IG", (1e-300, 1.0, 1e-300)), r, -2.0)
    np.testing.assert_allclose(path, -2.0, rtol=0, atol=1e-12)


def test_ada_step_matches_direct_formula():
    b1, g, a, v_prev = 0.4, 10.0, 0.05, -1.0
    r_prev = v_prev + 5.0
    spec = qm.CaviarSpec("ADA", (b1,), g)
    path = qm.caviar_path(spec, np.array([r_prev]), v_prev, alpha=a)
    expected = v_prev + b1 * (1 / (1 + mpmath.exp(g * (r_prev - v_prev))) - a)
    assert path[1] == pytest.approx(float(expected), abs=1e-15)
    assert path[1] == pytest.approx(v_prev - b1 * a, abs=1e-20 + 1e-12)


def test_caviar_path_requires_negative_start():
    with pytest.raises(DomainError):
        qm.caviar_path(qm.CaviarSpec("SAV", (0.0, 0.9, -0.1)), np.zeros(5), 0.5)


def test_ig_spec_requires_positive_betas():
    with pytest.raises(DomainError):
        qm.CaviarSpec("IG", (0.1, 0.0, 0.2))


def _iid(seed, n=1500):
    return np.random.default_rng(seed).standard_normal(n)


def test_fit_caviar_sav_level_on_iid_data():
    r = _iid(4)
    fit = qm.fit_caviar(r, "SAV", 0.05, seed=0)
    assert abs(np.mean(fit.path[:-1]) - np.quantile(r, 0.05)) <= 0.15


@pytest.mark.parametrize("form", ["SAV", "AS", "IG", "ADA"])
def test_fit_caviar_beats_random_draws(form):
    r = _iid(5, 1000) * 1.3
    fit = qm.fit_caviar(r, form, 0.05, seed=1)
    rng = np.random.default_rng(9)
    v0 = qm.initial_quantile(r, 0.05)
    for _ in range(50):
        draw = qm._caviar_start(qm.CaviarForm(form), r, v0, rng)
        loss = qm.caviar_loss(qm.CaviarSpec(form, tuple(draw)), r, 0.05)
        assert fit.loss <= loss + 1e-12


def test_fit_caviar_median_on_symmetric_data():
    r = _iid(6, 2000)
    r = np.concatenate([r, -r])
    np.random.default_rng(6).shuffle(r)
    fit = qm.fit_caviar(r, "SAV", 0.5, seed=0, v0=-1e-3)
    assert abs(np.mean(fit.path[:-1])) < 0.15


def test_fit_caviar_is_reproducible():
    r = _iid(7, 800)
    a = qm.fit_caviar(r, "AS", 0.01, seed=3)
    b = qm.fit_caviar(r, "AS", 0.01, seed=3)
    assert a.spec == b.spec and a.loss == b.loss


def test_caviar_window_too_short():
    with pytest.raises(InsufficientDataError):
        qm.fit_caviar(_iid(0, 200), "SAV", 0.05)


def test_exp_connection_multiplier():
    spec = qm.CaviarEsSpec(qm.CaviarSpec("SAV", (0.0, 0.9, -0.1)), "EXP", (0.0,))
    assert spec.multiplier == 2.0
    low = qm.CaviarEsSpec(spec.caviar, "EXP", (-30.0,))
    assert 1.0 < low.multiplier < 1.0 + 1e-12


def test_ar_connection_gammas_nonnegative():
    with pytest.raises(DomainError):
        qm.CaviarEsSpec(qm.CaviarSpec("SAV", (0.0, 0.9, -0.1)), "AR", (0.1, -0.2, 0.5))


@pytest.mark.parametrize("form,conn", [("SAV", "AR"), ("AS", "EXP"), ("SAV", "EXP"), ("IG", "AR")])
def test_caviar_es_paths_do_not_cross_and_beat_two_stage(form, conn):
    r = np.random.default_rng(8).standard_t(5, 1000)
    fit = qm.fit_caviar_es(r, form, conn, 0.05, seed=2)
    assert np.all(fit.es_path < fit.var_path)
    assert np.all(fit.var_path <= 0)
    assert fit.score <= fit.two_stage_score
    assert fit.score == pytest.approx(
        qm.al_objective(fit.spec, r, 0.05, fit.v0, fit.x0), rel=1e-12)
    f = qm.caviar_es_forecast(fit, 0.05)
    assert f.es < f.var


def test_expectile_half_is_mean():
    x = np.random.default_rng(10).exponential(size=999)
    assert qm.expectile(x, 0.5) == pytest.approx(x.mean(), abs=1e-12)


def test_expectile_nondecreasing_in_tau():
    x = np.random.default_rng(11).standard_t(4, 3000)
    taus = np.linspace(0.001, 0.999, 60)
    vals = [qm.expectile(x, t) for t in taus]
    assert np.all(np.diff(vals) >= -1e-12)


def _als(r, m, tau):
    u = r - m
    return float(np.mean(np.where(u < 0, 1 - tau, tau) * u * u))


def _care_sav_path(b, r, mu0):
    m = [mu0]
    for x in r:
        m.append(b[0] + b[1] * m[-1] + b[2] * abs(x))
    return np.array(m)


def test_care_beats_random_draws_at_fixed_tau():
    r = np.random.default_rng(12).standard_t(6, 1000)
    tau = 0.02
    fit = qm.fit_care(r, "SAV", 0.05, tau=tau, seed=0)
    assert fit.loss == pytest.approx(_als(r, _care_sav_path(fit.spec.betas, r, fit.mu0)[:-1], tau),
                                     rel=1e-10)
    rng = np.random.default_rng(13)
    e = qm.expectile(r, tau)
    for _ in range(50):
        b = qm._care_start(qm.CareForm.SAV, r, e, rng)
        assert fit.loss <= _als(r, _care_sav_path(b, r, fit.mu0)[:-1], tau) + 1e-12


def test_care_calibration_on_normal_data():
    # reference level: the tau whose expectile leaves 5% of a big normal sample below it
    big = np.random.default_rng(14).standard_normal(400_000)
    grid = np.linspace(0.004, 0.03, 261)
    cover = np.array([np.mean(big < qm.expectile(big, t)) for t in grid])
    tau_ref = float(grid[np.argmin(np.abs(cover - 0.05))])
    assert abs(tau_ref - 0.0124) < 0.002
    fit = qm.fit_care(_iid(15, 2000), "SAV", 0.05, seed=0)
    assert abs(fit.spec.tau - tau_ref) <= 0.004
    assert abs(fit.coverage - 0.05) <= 0.01


def test_care_var_es_mapping():
    spec = qm.CareSpec("SAV", (0.0, 0.9, -0.1), 0.0135)
    f = qm.care_var_es(spec, -1.0, 0.05)
    expected = -(1 + mpmath.mpf("0.0135") / ((1 - 2 * mpmath.mpf("0.0135")) * mpmath.mpf("0.05")))
    assert f.var == -1.0
    assert f.es == pytest.approx(float(expected), abs=1e-14)
    assert f.es == pytest.approx(-1.27750, abs=1e-5)


def test_care_multiplier_limits():
    for tau in (1e-9, 0.01, 0.2, 0.49):
        f = qm.care_var_es(qm.CareSpec("SAV", (0.0, 0.9, -0.1), tau), -2.0, 0.05)
        assert f.es < f.var
    tiny = qm.care_var_es(qm.CareSpec("SAV", (0.0, 0.9, -0.1), 1e-12), -2.0, 0.05)
    assert tiny.es == pytest.approx(-2.0, abs=1e-9)


def test_care_spec_rejects_upper_tail_tau():
    with pytest.raises(DomainError):
        qm.CareSpec("SAV", (0.0, 0.9, -0.1), 0.5)
