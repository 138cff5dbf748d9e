import itertools

import numpy as np
import pytest
from statsmodels.regression.quantile_regression import QuantReg

from oracles import al_score_reference, egarch_laplace_dgp, laplace_var_es
from tailrisk import combination as cmb
from tailrisk.errors import InfeasibleError, InputError


def test_average_and_median_examples():
    assert cmb.combine_simple_average([-1, -2, -3]) == -2
    assert cmb.combine_median([-1, -2, -3]) == -2
    assert cmb.combine_median([-1, -2, -3, -10]) == -2.5
    assert cmb.combine_simple_average([-4.2]) == -4.2
    with pytest.raises(InputError):
        cmb.combine_median([])
    with pytest.raises(InputError):
        cmb.combine_simple_average([])


def test_average_is_permutation_invariant():
    x = np.random.default_rng(0).normal(size=9)
    assert cmb.combine_simple_average(x) == pytest.approx(cmb.combine_simple_average(x[::-1]))


def test_median_is_robust_to_one_outlier():
    x = np.array([-1.0, -1.2, -1.5, -1.9, -2.4])
    y = x.copy()
    y[0] = -1e6
    assert abs(cmb.combine_median(y) - cmb.combine_median(x)) <= 0.4 + 1e-12


def test_weights_must_lie_on_simplex():
    with pytest.raises(InputError):
        cmb.CombinationWeights(np.array([0.6, 0.5]), np.array([1.0]))
    with pytest.raises(InputError):
        cmb.CombinationWeights(np.array([1.2, -0.2]), np.array([1.0]))


def _panel(seed, T=600, k=3):
    """Scaled copies of a noisy volatility proxy; ES strictly below VaR."""
    rng = np.random.default_rng(seed)
    sig = np.exp(0.3 * np.cumsum(rng.normal(0, 0.05, T)))
    r = 0.02 + sig * rng.standard_t(5, T) * 0.8
    V = np.column_stack([-sig * m for m in np.linspace(1.1, 2.0, k)])
    E = np.column_stack([V[:, j] * m for j, m in enumerate(np.linspace(1.15, 1.6, k))])
    return V, E, r


def _check_contract(w, V, E, r, alpha):
    assert abs(w.beta.sum() - 1) <= 1e-8 and abs(w.gamma.sum() - 1) <= 1e-8
    assert np.all(w.beta >= 0) and np.all(w.gamma >= 0)
    assert np.all(E @ w.gamma <= V @ w.beta)
    s = cmb.combination_score(w.beta, w.gamma, V, E, r, alpha)
    assert s == pytest.approx(al_score_reference(r, V @ w.beta, E @ w.gamma, alpha), rel=1e-12)
    n, h = V.shape[1], E.shape[1]
    cands = [(np.full(n, 1 / n), np.full(h, 1 / h))]
    cands += [(np.eye(n)[i], np.eye(h)[j]) for i, j in itertools.product(range(n), range(h))]
    for b, g in cands:
        if np.all(E @ g <= V @ b):
            assert s <= al_score_reference(r, V @ b, E @ g, alpha) + 1e-6


@pytest.mark.parametrize("seed", range(4))
def test_joint_combination_contract(seed):
    V, E, r = _panel(seed)
    w = cmb.fit_joint_combination(V, E, r, 0.05, seed=seed)
    _check_contract(w, V, E, r, 0.05)


def test_single_model_is_trivial():
    V, E, r = _panel(1, k=1)
    w = cmb.fit_joint_combination(V, E, r, 0.05)
    assert w.beta.tolist() == [1.0] and w.gamma.tolist() == [1.0]


def test_duplicated_model_leaves_optimum_unchanged():
    V, E, r = _panel(2, k=2)
    one = cmb.fit_joint_combination(V, E, r, 0.05, seed=0)
    dup = cmb.fit_joint_combination(np.column_stack([V, V[:, :1]]),
                                    np.column_stack([E, E[:, :1]]), r, 0.05, seed=0)
    assert dup.score == pytest.approx(one.score, abs=1e-5)


def test_oracle_model_gets_the_weight():
    r, scale = egarch_laplace_dgp(1500, seed=21)
    v, e = laplace_var_es(scale, 0.05)
    V = np.column_stack([v, 1.6 * v])
    E = np.column_stack([e, 1.6 * e])
    w = cmb.fit_joint_combination(V, E, r, 0.05, seed=0)
    assert w.beta[0] >= 0.9 and w.gamma[0] >= 0.9
    # grid search over the two-model simplex
    grid = np.linspace(0, 1, 51)
    best = min((al_score_reference(r, V @ [b, 1 - b], E @ [g, 1 - g], 0.05), b, g)
               for b in grid for g in grid if np.all(E @ [g, 1 - g] <= V @ [b, 1 - b]))
    assert w.score <= best[0] + 1e-6
    assert best[1] >= 0.9 and best[2] >= 0.9


def test_crossing_everywhere_is_infeasible():
    T = 200
    V = np.full((T, 2), -1.0)
    E = np.full((T, 2), -0.5)
    r = np.random.default_rng(3).normal(size=T)
    with pytest.raises(InfeasibleError):
        cmb.fit_joint_combination(V, E, r, 0.05)


def test_positive_individual_es_rejected():
    V, E, r = _panel(0)
    E[5, 1] = 0.1
    with pytest.raises(InputError):
        cmb.fit_joint_combination(V, E, r, 0.05)


def test_combined_forecast_rules():
    v = np.array([-1.0, -2.0, -3.0])
    e = np.array([-1.5, -2.5, -4.0])
    eq = cmb.equal_weights(3, 3)
    f = cmb.combined_forecast(eq, v, e)
    assert f.var == pytest.approx(cmb.combine_simple_average(v))
    assert f.es == pytest.approx(cmb.combine_simple_average(e))
    one = cmb.CombinationWeights(np.array([0, 1.0, 0]), np.array([0, 1.0, 0]))
    f = cmb.combined_forecast(one, v, e)
    assert (f.var, f.es) == (-2.0, -2.5)
    two = cmb.CombinationWeights(np.array([0.3, 0.7]), np.array([0.5, 0.5]))
    f = cmb.combined_forecast(two, v[:2], e[:2])
    assert -2.0 <= f.var <= -1.0
    with pytest.raises(InputError):
        cmb.combined_forecast(two, v, e)


def test_combined_forecast_clamps_crossing():
    w = cmb.CombinationWeights(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
    f = cmb.combined_forecast(w, np.array([-1.0, -3.0]), np.array([-2.0, -4.0]))
    assert f.es == pytest.approx(-3.0 - 1e-8) and f.flag


def test_lasso_exact_fit():
    y = np.random.default_rng(4).normal(size=200)
    spec = cmb.fit_quantile_lasso(y, y, 0.05, 0.0)
    assert spec.intercept == pytest.approx(0.0, abs=1e-8)
    assert spec.coefficients[0] == pytest.approx(1.0, abs=1e-8)


def test_lasso_large_penalty_gives_empirical_quantile():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(400, 3))
    y = X @ [0.5, -0.2, 0.1] + rng.normal(size=400)
    tau = 0.0164
    spec = cmb.fit_quantile_lasso(X, y, tau, 1e4)
    assert np.allclose(spec.coefficients, 0, atol=1e-9)
    s = np.sort(y)
    k = int(np.ceil(tau * y.size))
    assert s[k - 1] - 1e-9 <= spec.intercept <= s[k] + 1e-9

    def loss(q):
        u = y - q
        return np.sum(u * (tau - (u < 0)))

    assert loss(spec.intercept) == pytest.approx(loss(np.quantile(y, tau, method="inverted_cdf")),
                                                 abs=1e-9)


def test_lasso_unpenalised_matches_statsmodels_loss():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(300, 2))
    y = 0.3 + X @ [1.0, -0.5] + rng.standard_t(4, 300)
    tau = 0.05
    spec = cmb.fit_quantile_lasso(X, y, tau, 0.0)
    ref = QuantReg(y, np.column_stack([np.ones(300), X])).fit(q=tau, max_iter=5000).params

    def loss(b0, b):
        u = y - b0 - X @ b
        return np.sum(u * (tau - (u < 0)))

    assert loss(spec.intercept, spec.coefficients) <= loss(ref[0], ref[1:]) + 1e-9
    resid = y - spec.predict(X)
    assert np.mean(resid < -1e-9) <= tau + 1 / y.size
    assert np.mean(resid <= 1e-9) >= tau - 1 / y.size


def test_lasso_needs_ten_rows_per_predictor():
    with pytest.raises(InputError):
        cmb.fit_quantile_lasso(np.zeros((30, 4)), np.zeros(30), 0.05, 0.1)
    with pytest.raises(InputError):
        cmb.fit_quantile_lasso(np.zeros((50, 1)), np.zeros(50), 0.05, -1.0)


def test_lasso_lambda_selected_from_grid():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(300, 3))
    y = X[:, 0] + rng.normal(size=300)
    spec = cmb.fit_quantile_lasso_cv(X, y, 0.05)
    assert spec.lam in cmb.LASSO_GRID
