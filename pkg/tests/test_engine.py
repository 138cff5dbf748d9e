import numpy as np
import pytest

from oracles import egarch_laplace_dgp
from tailrisk import engine
from tailrisk.errors import InputError, InsufficientDataError
from tailrisk.series import ReturnSeries, describe

FAST_MODELS = ("EWMA", "GARCH-T", "HS-120", "CARE-SAV", "CAViaR-ES-SAV-AR")


def _series(n=420, seed=0):
    return engine.simulate_dgp(n, seed)


def test_plan_validation():
    with pytest.raises(InputError):
        engine.RollingPlan(alphas=(0.025,))
    with pytest.raises(InputError):
        engine.RollingPlan(alphas=())
    with pytest.raises(InputError):
        engine.RollingPlan(model_list=("GARCH-X",))
    with pytest.raises(InputError):
        engine.RollingPlan(initial_window=100, hs_window=168)
    plan = engine.RollingPlan()
    assert (plan.initial_window, plan.hs_window, plan.combo_window, plan.eval_tail) == (
        2000, 168, 1251, 1200)
    assert plan.n_forecasts(4502) == 2502


def test_plan_series_and_combination_checks():
    plan = engine.RollingPlan()
    with pytest.raises(InsufficientDataError):
        plan.check_series(2000)
    plan.check_series(2001)
    plan.check_combination(2502)
    with pytest.raises(InsufficientDataError):
        plan.check_combination(1251)
    with pytest.raises(InsufficientDataError):
        engine.RollingPlan(eval_tail=1300).check_combination(2502)


def test_model_ids_resolve():
    for m in engine.DEFAULT_MODELS + engine.SIMULATION_MODELS:
        assert engine.model_runner(m).model_id == m
    for bad in ("HS-0", "CARE-ADA", "CAViaR-ES-SAV", "EGARCH"):
        with pytest.raises(InputError):
            engine.model_runner(bad)


def test_dgp_matches_direct_recursion():
    s = engine.simulate_dgp(800, seed=3)
    r, _ = egarch_laplace_dgp(800, seed=3)
    np.testing.assert_array_equal(s.returns, r)
    assert len(engine.simulate_dgp(3500, 0)) == 3500
    assert np.all(np.diff(s.timestamps) == np.timedelta64(1, "h"))


def test_dgp_is_leptokurtic_and_deterministic():
    assert all(describe(engine.simulate_dgp(3500, seed)).kurtosis > 3 for seed in range(20))
    a, b = engine.simulate_dgp(500, 9), engine.simulate_dgp(500, 9)
    np.testing.assert_array_equal(a.returns, b.returns)
    with pytest.raises(InputError):
        engine.simulate_dgp(50, 0)


@pytest.fixture(scope="module")
def small_run():
    s = _series()
    plan = engine.RollingPlan(initial_window=300, hs_window=120, combo_window=60, eval_tail=50,
                              alphas=(0.01, 0.05), model_list=FAST_MODELS, seed=4)
    return s, plan, engine.run_rolling(s, plan)


def test_rolling_shapes_and_alignment(small_run):
    s, plan, panels = small_run
    assert set(panels) == {0.01, 0.05}
    for a, p in panels.items():
        assert len(p) == len(s) - plan.initial_window
        assert p.model_ids == FAST_MODELS
        np.testing.assert_array_equal(p.realized, s.returns[plan.initial_window:])
        np.testing.assert_array_equal(p.timestamps, s.timestamps[plan.initial_window:])
        assert np.all(p.es < p.var)
    # models sharing one fit across alphas are monotone in alpha
    for m in ("EWMA", "GARCH-T", "HS-120"):
        assert np.all(panels[0.01].column(m)[0] <= panels[0.05].column(m)[0])


def test_rolling_is_deterministic(small_run):
    s, plan, panels = small_run
    again = engine.run_rolling(s, plan)
    for a in panels:
        np.testing.assert_array_equal(panels[a].var, again[a].var)
        np.testing.assert_array_equal(panels[a].es, again[a].es)


def test_hs_column_matches_direct_computation(small_run):
    s, plan, panels = small_run
    from tailrisk.quantile_models import hs_forecast
    v, e = panels[0.05].column("HS-120")
    for i in (0, 17, 119):
        t = plan.initial_window + i
        f = hs_forecast(s.returns[t - 120:t], 0.05)
        assert (v[i], e[i]) == (f.var, f.es)


def test_constant_series_drops_every_model():
    s = ReturnSeries.from_returns(np.full(320, 0.1))
    plan = engine.RollingPlan(initial_window=300, alphas=(0.05,), model_list=("EWMA",))
    with pytest.raises(InsufficientDataError, match="first window"):
        engine.run_rolling(s, plan)


def test_failing_window_carries_previous_forecast():
    r = np.concatenate([np.random.default_rng(1).normal(size=300), np.zeros(320)])
    plan = engine.RollingPlan(initial_window=300, alphas=(0.05,), model_list=("GARCH-N",))
    p = engine.run_rolling(ReturnSeries.from_returns(r), plan)[0.05]
    flags = p.flags["GARCH-N"]
    assert flags
    i = flags[0][0]
    assert p.var[i, 0] == p.var[i - 1, 0] and p.es[i, 0] == p.es[i - 1, 0]


def test_combination_counts_and_no_crossing(small_run):
    s, plan, panels = small_run
    comb = engine.run_combination(panels[0.05], plan)
    assert len(comb) == len(panels[0.05]) - plan.combo_window
    assert comb.model_ids[-3:] == engine.COMBINERS
    assert np.all(comb.es <= comb.var)
    np.testing.assert_array_equal(comb.realized, panels[0.05].realized[plan.combo_window:])
    beta = comb.weights["beta"]
    np.testing.assert_allclose(beta.sum(axis=1), 1.0, atol=1e-8)


def test_single_model_combination_returns_that_model(small_run):
    s, plan, panels = small_run
    one = panels[0.05].select(["GARCH-T"])
    comb = engine.run_combination(one, plan)
    for c in range(1, 4):
        np.testing.assert_allclose(comb.var[:, c], comb.var[:, 0], rtol=0, atol=1e-12)
        np.testing.assert_allclose(comb.es[:, c], comb.es[:, 0], rtol=0, atol=1e-12)


def test_panel_csv_roundtrip(small_run, tmp_path):
    _, _, panels = small_run
    path = tmp_path / "panel.csv"
    engine.write_panel_csv([panels[0.01], panels[0.05]], path)
    back = engine.read_panel_csv(path)
    for a in panels:
        np.testing.assert_array_equal(back[a].var, panels[a].var)
        np.testing.assert_array_equal(back[a].es, panels[a].es)
        np.testing.assert_array_equal(back[a].realized, panels[a].realized)
        assert back[a].model_ids == panels[a].model_ids


def test_panel_csv_diagnostics(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("timestamp,model,alpha,var,es,realized\n0,A,0.05,-1,-2,0.3\n1,A,0.05,x,-2,0.1\n")
    with pytest.raises(InputError, match=r":3: column var"):
        engine.read_panel_csv(path)
    path.write_text("time,model,alpha,var,es,realized\n")
    with pytest.raises(InputError, match="header"):
        engine.read_panel_csv(path)


def test_es_levels_for_parametric_models():
    expected = {"EWMA": (0.0196, 0.0038), "GARCH-T": (0.0164, 0.0032),
                "GARCH-SKT": (0.0164, 0.0032), "GJRGARCH-T": (0.0164, 0.0032),
                "GJRGARCH-SKT": (0.0164, 0.0032), "EGARCH-N": (0.0196, 0.0038),
                "EGARCH-T": (0.0164, 0.0032), "EGARCH-SKT": (0.0164, 0.0032)}
    for m, (l5, l1) in expected.items():
        assert engine.model_es_level(m, 0.05) == l5
        assert engine.model_es_level(m, 0.01) == l1
    assert engine.model_es_level("CARE-AS", 0.05) == 0.018
    assert engine.model_es_level("QLASSO-T(4)", 0.05) == 0.0164
