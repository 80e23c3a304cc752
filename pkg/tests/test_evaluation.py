import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import roc_auc_score

from cogevo.evaluation import (
    ALPHA_GRID,
    KeyMismatchError,
    MetricReport,
    NonDecayingWarning,
    PowerLawRegressor,
    UndefinedMetricError,
    align_series,
    alignment_score,
    auc,
    binned_error_series,
    curve_csv,
    curve_svg,
    evaluate_run,
    fit_power_law,
    mistake_precision,
    mistake_precision_detail,
    r2_lc,
    rmse,
)


def pairs_auc(p, y):
    pos = [a for a, l in zip(p, y) if l]
    neg = [a for a, l in zip(p, y) if not l]
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
    return wins / (len(pos) * len(neg))


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_auc_matches_all_pairs_oracle(data):
    n = data.draw(st.integers(2, 200))
    # coarse scores so ties are common
    p = data.draw(st.lists(st.integers(0, 20), min_size=n, max_size=n))
    y = data.draw(st.lists(st.booleans(), min_size=n, max_size=n).filter(lambda v: 0 < sum(v) < len(v)))
    p = [v / 20 for v in p]
    assert auc(p, y) == pairs_auc(p, y)


def test_auc_agrees_with_sklearn():
    rng = np.random.default_rng(0)
    p, y = rng.random(300), rng.random(300) < 0.4
    assert auc(p, y) == pytest.approx(roc_auc_score(y, p))


def test_auc_examples():
    assert auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert auc([0.5] * 4, [1, 0, 1, 0]) == 0.5
    with pytest.raises(UndefinedMetricError):
        auc([0.1, 0.2], [1, 1])


def test_rmse():
    assert rmse([1, 0, 1], [True, False, True]) == 0.0
    assert rmse([0.5, 0.5], [1, 0]) == 0.5
    with pytest.raises(UndefinedMetricError):
        rmse([], [])


def _row(s, t, correct, tag=None, item="q"):
    return {"student": s, "t": t, "item": item, "correct": correct, "misconception": tag}


def test_mistake_precision_variants():
    truth = [_row("a", 0, False, "x"), _row("a", 1, True), _row("a", 2, False, "y"), _row("a", 3, False, "z")]
    agent = [_row("a", 0, False, "x"), _row("a", 1, False, "x"), _row("a", 2, False, "q"), _row("a", 3, True)]
    d = mistake_precision_detail(agent, truth)
    assert (d.n_agent_errors, d.n_co_errors, d.n_matches) == (3, 2, 1)
    assert d.strict == pytest.approx(1 / 3) and d.co_error == 0.5
    assert mistake_precision(agent, truth) == d.strict
    with pytest.raises(KeyMismatchError):
        mistake_precision([_row("b", 0, False, "x")], truth)
    with pytest.raises(UndefinedMetricError):
        mistake_precision([_row("a", 1, True)], truth)


grid_alpha = st.sampled_from([float(a) for a in ALPHA_GRID])


@settings(max_examples=100, deadline=None)
@given(st.floats(0.05, 0.9), grid_alpha, st.floats(0.0, 0.1))
def test_fit_recovers_noiseless_curve(A, alpha, eps):
    n = np.arange(1, 101, dtype=float)
    fit = fit_power_law(np.column_stack([n, A * n ** -alpha + eps]))
    assert abs(fit.A - A) <= 0.01 and abs(fit.alpha - alpha) <= 0.01 and abs(fit.eps - eps) <= 0.01
    assert fit.fit_r2 >= 0.999


def test_fit_errors_and_warnings():
    with pytest.raises(ValueError, match="at least 4"):
        fit_power_law([(1, 0.5), (2, 0.4), (3, 0.3)])
    with pytest.raises(ValueError):
        fit_power_law([(0, 0.5), (2, 0.4), (3, 0.3), (4, 0.2)])
    with pytest.warns(NonDecayingWarning):
        flat = fit_power_law([(n, 0.3) for n in range(1, 10)])
    assert flat.degenerate and math.isnan(flat.fit_r2) and flat.eps == 0.3
    with pytest.warns(NonDecayingWarning):
        rising = fit_power_law([(n, 0.1 * n) for n in range(1, 6)])
    assert rising.non_decaying


def test_power_law_regressor():
    n = np.arange(1, 40)
    y = 0.5 * n ** -0.7 + 0.05
    est = PowerLawRegressor().fit(n.reshape(-1, 1), y)
    assert est.alpha_ == pytest.approx(0.7) and est.score(n.reshape(-1, 1), y) > 0.999
    np.testing.assert_allclose(est.predict(n.reshape(-1, 1)), y, atol=1e-9)


def test_r2_lc():
    h = [0.5, 0.3, 0.2]
    assert r2_lc(h, h) == 1.0
    assert r2_lc([0.3, 0.3, 0.3], h) < 0.0 + 1e-12
    with pytest.raises(UndefinedMetricError):
        r2_lc([0.1, 0.2], [0.2, 0.2])
    with pytest.raises(ValueError):
        r2_lc([0.1], [0.2, 0.3])


def test_binned_series_counts_per_knowledge_point():
    kp = {"x": 0, "y": 1}
    rows = [_row("a", t, t % 2 == 0, item="x" if t < 4 else "y") for t in range(6)]
    # student a: x at t=0..3 (n=1..4), y at t=4,5 (n=1,2)
    s = binned_error_series(rows, None, 2, kp)
    assert s == [(1.5, 0.5), (3.5, 0.5)]
    assert binned_error_series(rows, 1, 1, kp) == [(1.0, 0.0), (2.0, 1.0)]
    with pytest.raises(KeyError):
        binned_error_series(rows, 9, 1, kp)


def test_align_series():
    assert align_series([(1, 0.2), (2, 0.1)], [(2, 0.3), (3, 0.0)]) == ([2], [0.1], [0.3])


def test_alignment_score():
    assert alignment_score([0.2, 0.4]) == pytest.approx(0.3)
    with pytest.raises(UndefinedMetricError):
        alignment_score([])


def test_report_serialization():
    rep = MetricReport(auc=0.7, rmse=0.4, r2_lc=float("nan"))
    assert '"r2_lc": null' in rep.to_json()
    assert rep.check_ranges() == ["r2_lc=nan outside [-inf, 1.0]"]
    assert MetricReport(auc=0.7, r2_lc=-4.0).check_ranges() == []
    assert MetricReport(auc=1.5).check_ranges()
    assert rep.to_csv().splitlines()[1].startswith("0.700000,0.400000,n/a")


def test_curve_outputs():
    text = curve_csv([1.0, 2.0], [0.5, 0.4], [0.4, 0.3], [0.45, 0.35])
    assert text.splitlines()[0] == "n,human_rate,agent_rate,fitted_E"
    svg = curve_svg([1, 2], {"human": [0.5, 0.4]})
    assert svg.startswith("<svg") and "polyline" in svg


def test_evaluate_run_self(small_world):
    bank, ds = small_world
    rows = [{"student": r.student, "t": r.t, "item": r.item, "p_hat": float(r.correct), "correct": r.correct,
             "misconception": r.misconception, "delta_align": None} for r in ds.records]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep, curves = evaluate_run(rows, ds.records, bank.knowledge_points(), bin_width=5)
    assert rep.rmse == 0.0 and rep.auc == 1.0 and rep.r2_lc == 1.0 and rep.mistake_precision == 1.0
    assert rep.align is None and "align" in rep.notes
    assert curves.human == curves.agent


def test_evaluate_run_key_mismatch(small_world):
    bank, ds = small_world
    bad = [{"student": "nobody", "t": 0, "item": "q0000", "p_hat": 0.5, "correct": True, "misconception": None}]
    with pytest.raises(KeyMismatchError):
        evaluate_run(bad, ds.records, bank.knowledge_points())
