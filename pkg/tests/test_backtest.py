import csv
import json

import mpmath
import numpy as np
import pytest
from scipy import stats

from tailrisk import backtest as bt
from tailrisk.errors import DomainError, InputError


def _lr_uc(m, N, a):
    m, N, a = mpmath.mpf(m), mpmath.mpf(N), mpmath.mpf(a)
    p = N / m
    return float(-2 * ((m - N) * mpmath.log(1 - a) + N * mpmath.log(a))
                 + 2 * ((m - N) * mpmath.log(1 - p) + N * mpmath.log(p)))


def _hits(pattern, alpha=0.05):
    return bt.HitSequence(np.asarray(pattern), alpha)


def test_violation_ratio_exact_target():
    r = np.zeros(1200)
    f = np.full(1200, -1.0)
    r[::20] = -2.0
    vrate, vratio = bt.violation_ratio(r, f, 0.05)
    assert vrate == 0.05 and vratio == pytest.approx(1.0)


def test_violation_ratio_with_floor_forecast():
    r = np.random.default_rng(0).normal(size=300)
    assert bt.violation_ratio(r, np.full(300, r.min() - 1), 0.05)[0] == 0.0
    with pytest.raises(InputError):
        bt.violation_ratio([], [], 0.05)


def test_hit_sequence_demeaned():
    h = _hits([0, 1, 0, 0])
    np.testing.assert_allclose(h.demeaned, [-0.05, 0.95, -0.05, -0.05])
    with pytest.raises(InputError):
        _hits([0, 2, 1])


def test_uc_zero_at_exact_rate():
    h = np.zeros(1200, dtype=int)
    h[::20] = 1
    stat, p = bt.uc_test(_hits(h))
    assert stat == 0.0 and p == 1.0


def test_uc_matches_high_precision_lr():
    h = np.zeros(1200, dtype=int)
    h[:90] = 1
    stat, p = bt.uc_test(_hits(h))
    assert stat == pytest.approx(_lr_uc(1200, 90, 0.05), abs=1e-9)
    assert p == pytest.approx(stats.chi2.sf(stat, 1), abs=1e-12)


def test_uc_edge_counts_use_zero_log_zero():
    assert bt.uc_test(_hits(np.zeros(100, dtype=int)))[0] == pytest.approx(
        -2 * 100 * np.log(0.95), abs=1e-10)
    assert np.isfinite(bt.uc_test(_hits(np.ones(100, dtype=int)))[0])


def test_critical_values():
    assert stats.chi2.ppf(0.95, 1) == pytest.approx(3.84, abs=1e-2)
    assert stats.chi2.ppf(0.99, 1) == pytest.approx(6.63, abs=1e-2)
    assert stats.chi2.ppf(0.95, 2) == pytest.approx(5.99, abs=1e-2)
    assert stats.chi2.ppf(0.99, 2) == pytest.approx(9.21, abs=1e-2)
    assert stats.chi2.ppf(0.95, 3) == pytest.approx(7.82, abs=1e-2)
    assert stats.chi2.ppf(0.99, 3) == pytest.approx(11.34, abs=1e-2)
    assert stats.chi2.ppf(0.95, 6) == pytest.approx(12.59, abs=1e-2)
    assert stats.chi2.ppf(0.99, 6) == pytest.approx(16.81, abs=1e-2)


def test_cc_clustered_hits_add_independence_component():
    h = np.zeros(1200, dtype=int)
    for start in range(0, 1200, 40):
        h[start:start + 2] = 1  # 60 hits in pairs
    seq = _hits(h)
    cc, _ = bt.cc_test(seq)
    uc, _ = bt.uc_test(seq)
    prev, cur = h[:-1], h[1:]
    n = {(i, j): int(np.sum((prev == i) & (cur == j))) for i in (0, 1) for j in (0, 1)}
    mp = mpmath.mpf
    p01 = mp(n[0, 1]) / (n[0, 0] + n[0, 1])
    p11 = mp(n[1, 1]) / (n[1, 0] + n[1, 1])
    p = mp(n[0, 1] + n[1, 1]) / sum(n.values())
    ind = -2 * ((n[0, 0] + n[1, 0]) * mpmath.log(1 - p) + (n[0, 1] + n[1, 1]) * mpmath.log(p)
                - n[0, 0] * mpmath.log(1 - p01) - n[0, 1] * mpmath.log(p01)
                - n[1, 0] * mpmath.log(1 - p11) - n[1, 1] * mpmath.log(p11))
    assert cc == pytest.approx(uc + float(ind), abs=1e-8)
    assert cc > uc


def test_dq_zero_violations_closed_form():
    f = np.random.default_rng(1).normal(-1.6, 0.2, 1200)
    res = bt.dq_test(_hits(np.zeros(1200, dtype=int)), f, 4)
    assert res.stat == pytest.approx(1200 * 0.05 / 0.95, abs=1e-8)
    assert res.p_value < 1e-6


def test_dq_constant_forecast_flags_pseudo_inverse():
    res = bt.dq_test(_hits(np.zeros(500, dtype=int)), np.full(500, -1.0), 1)
    assert res.pseudo_inverse
    assert res.stat == pytest.approx(500 * 0.05 / 0.95, abs=1e-8)


@pytest.mark.parametrize("k", [1, 4])
def test_dq_matches_normal_equations(k):
    rng = np.random.default_rng(2 + k)
    m, a = 800, 0.05
    h = (rng.random(m) < 0.07).astype(int)
    f = rng.normal(-1.6, 0.3, m)
    H = h - a
    cols = [np.ones(m)] + [np.concatenate([np.zeros(j), H[:-j]]) for j in range(1, k + 1)] + [f]
    W = np.column_stack(cols)
    stat = H @ W @ np.linalg.solve(W.T @ W, W.T @ H) / (a * (1 - a))
    res = bt.dq_test(_hits(h, a), f, k)
    assert res.stat == pytest.approx(stat, rel=1e-9)
    assert res.p_value == pytest.approx(stats.chi2.sf(stat, k + 2), rel=1e-9)
    assert not res.pseudo_inverse


def test_dq_validates_inputs():
    with pytest.raises(InputError):
        bt.dq_test(_hits(np.zeros(50, dtype=int)), np.zeros(50), 2)
    with pytest.raises(InputError):
        bt.dq_test(_hits(np.zeros(12, dtype=int)), np.zeros(12), 4)


def test_quantile_loss_examples_and_shift_invariance():
    assert bt.quantile_loss([-2.0], [-1.0], 0.05) == pytest.approx(0.95)
    assert bt.quantile_loss([0.0], [-1.0], 0.05) == pytest.approx(0.05)
    rng = np.random.default_rng(3)
    r, v = rng.normal(size=200), rng.normal(-1.6, 0.1, 200)
    assert bt.quantile_loss(r + 7.5, v + 7.5, 0.01) == pytest.approx(bt.quantile_loss(r, v, 0.01))


def test_al_score_examples():
    a = mpmath.mpf("0.05")
    first = -mpmath.log((a - 1) / -2) - (-2 + 1) * (a - 1) / (a * -2)
    second = -mpmath.log((a - 1) / -2) - (0 + 1) * a / (a * -2)
    assert bt.al_log_score([-2.0], [-1.0], [-2.0], 0.05) == pytest.approx(float(first), abs=1e-12)
    assert bt.al_log_score([0.0], [-1.0], [-2.0], 0.05) == pytest.approx(float(second), abs=1e-12)
    assert float(first) == pytest.approx(10.2444404749475, abs=1e-12)
    assert float(second) == pytest.approx(1.24444047494750, abs=1e-12)


def test_al_score_rejects_nonnegative_es_naming_index():
    with pytest.raises(DomainError, match="index 2"):
        bt.al_log_score([0, 0, 0], [-1, -1, -1], [-2, -2, 0.0], 0.05)
    # strictly negative everywhere is fine
    bt.al_log_score([0, 0, 0], [-1, -1, -1], [-2, -2, -1e-12], 0.05)


def test_stationary_bootstrap_block_length():
    idx = bt.stationary_bootstrap_indices(2000, 50, 10.0, np.random.default_rng(4))
    assert idx.shape == (50, 2000)
    assert idx.min() >= 0 and idx.max() < 2000
    breaks = np.mean(idx[:, 1:] != (idx[:, :-1] + 1) % 2000)
    assert breaks == pytest.approx(0.1, abs=0.01)


def test_mcs_identical_columns():
    x = np.random.default_rng(5).normal(size=(300, 1))
    inc, p, res = bt.model_confidence_set(np.hstack([x, x]), 0.75, model_ids=["a", "b"])
    assert inc == {"a", "b"} and p == {"a": 1.0, "b": 1.0} and res.degenerate


def test_mcs_drops_dominated_model_and_nests():
    rng = np.random.default_rng(6)
    base = rng.normal(size=(500, 1))
    L = np.hstack([base + rng.normal(0, 1, (500, 1)), base + rng.normal(0, 1, (500, 1)),
                   base + 1.0 + rng.normal(0, 1, (500, 1))])
    in75, p, res = bt.model_confidence_set(L, 0.75, bootstrap_reps=300, seed=1)
    in90, _, _ = bt.model_confidence_set(L, 0.90, bootstrap_reps=300, seed=1)
    assert 2 not in in75
    assert in75 <= in90
    order = [p[m] for m in res.elimination_order]
    assert order == sorted(order)


def test_mcs_is_reproducible():
    L = np.random.default_rng(7).normal(size=(200, 4))
    a = bt.mcs_elimination(L, reps=200, seed=3)
    b = bt.mcs_elimination(L, reps=200, seed=3)
    assert a == b


def test_mcs_input_checks():
    with pytest.raises(InputError):
        bt.model_confidence_set(np.zeros((50, 3)))
    with pytest.raises(DomainError):
        bt.model_confidence_set(np.random.default_rng(0).normal(size=(200, 2)), 1.5)


def test_backtest_report_and_writers(tmp_path):
    r = np.zeros(1200)
    r[::20] = -3.0
    var = np.full(1200, -1.0)
    es = np.full(1200, -2.0)
    rep = bt.backtest_model("perfect", r, var, es, 0.05, es_level=0.018)
    assert rep.vratio == pytest.approx(1.0)
    assert 0 <= rep.uc_p <= 1 and 0 <= rep.dq4_p <= 1
    bt.write_reports_json([rep], tmp_path / "r.json")
    bt.write_reports_csv([rep], tmp_path / "r.csv")
    data = json.loads((tmp_path / "r.json").read_text())
    assert data[0]["model_id"] == "perfect" and data[0]["mcs75"] is None
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert float(rows[0]["vratio"]) == pytest.approx(1.0)
