import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from cogevo.core import CognitiveLabel, CognitiveState, HyperParams, InteractionInput
from cogevo.decision import Response
from cogevo.icap import IcapDistribution
from cogevo.retrieval import (
    OMEGA_STAR,
    Assimilation,
    Conflict,
    HashedBagEmbedder,
    MemoryBank,
    MemoryRecord,
    conflict_state,
    hybrid_score,
    icc,
    retrieve,
    score_records,
    semantic_similarity,
    simpson,
    store,
    structural_similarity,
)

from conftest import make_item

HP = HyperParams()
EMB = HashedBagEmbedder()
a_s = st.floats(0.5, 3.0)
b_s = st.floats(-4.0, 4.0)
theta_s = st.floats(-3.0, 3.0)


def record(item, t=0):
    return MemoryRecord(InteractionInput(item), Response(0, True), CognitiveState(), IcapDistribution.uniform(), t)


def test_icc_oracle():
    it = make_item(a=1.7, b=0.4)
    for th in (-2.0, 0.4, 1.3):
        assert icc(it, th) == pytest.approx(1 / (1 + np.exp(-1.7 * (th - 0.4))))
    assert icc(it, 0.4) == 0.5


@settings(max_examples=200)
@given(st.floats(-5, 5), st.floats(0.1, 3))
def test_simpson_matches_quad_on_smooth(c, a):
    f = lambda x: 1 / (1 + np.exp(-a * (x - c)))
    grid = np.linspace(-1, 1, 65)
    ref, _ = quad(f, -1, 1)
    assert simpson(f(grid), -1, 1) == pytest.approx(ref, abs=1e-6)


@settings(max_examples=1000, deadline=None)
@given(a_s, b_s, a_s, b_s, theta_s)
def test_structural_matches_fine_trapezoid(a1, b1, a2, b2, th):
    got = structural_similarity(make_item(a=a1, b=b1), make_item(a=a2, b=b2), th, HP)
    x = np.linspace(th - 1, th + 1, 10_000)
    diff = np.abs(1 / (1 + np.exp(-a1 * (x - b1))) - 1 / (1 + np.exp(-a2 * (x - b2))))
    mad = np.trapezoid(diff, x) / 2.0
    assert got == pytest.approx(np.exp(-3.0 * mad), abs=1e-6)


@settings(max_examples=1000)
@given(a_s, b_s, a_s, b_s, theta_s)
def test_structural_identity_symmetry_range(a1, b1, a2, b2, th):
    i, j = make_item(a=a1, b=b1), make_item(a=a2, b=b2)
    assert structural_similarity(i, i, th, HP) == 1.0
    s = structural_similarity(i, j, th, HP)
    assert s == pytest.approx(structural_similarity(j, i, th, HP), abs=1e-12)
    assert np.exp(-3.0) - 1e-12 <= s <= 1.0


@settings(max_examples=1000)
@given(a_s, b_s, st.floats(0.0, 2.0), st.floats(0.01, 2.0), theta_s)
def test_structural_monotone_in_difficulty_gap(a, b, gap, extra, th):
    base = make_item(a=a, b=b)
    near = structural_similarity(base, make_item(a=a, b=b + gap), th, HP)
    far = structural_similarity(base, make_item(a=a, b=b + gap + extra), th, HP)
    assert far <= near + 1e-12


def test_structural_far_items_example():
    i, j = make_item(a=1.0, b=0.0), make_item(a=1.0, b=5.0)
    hp = HyperParams(k_struct=1.0)
    x = np.linspace(-1, 1, 10_000)
    mad = np.trapezoid(np.abs(1 / (1 + np.exp(-x)) - 1 / (1 + np.exp(-(x - 5)))), x) / 2.0
    assert structural_similarity(i, j, 0.0, hp) == pytest.approx(np.exp(-mad), abs=1e-6)


def test_structural_rejects_zero_window():
    # HyperParams itself rejects delta_theta <= 0
    with pytest.raises(ValueError):
        HyperParams(delta_theta=0.0)


def test_semantic_identity_and_floor():
    it = make_item(stem="fractions over a common denominator")
    assert semantic_similarity(InteractionInput(it), record(it), EMB) == pytest.approx(1.0)
    other = make_item(stem="zzz qqq")
    s = semantic_similarity(InteractionInput(it), record(other), EMB)
    # nonnegative bag vectors: cosine >= 0, so the mapped score is >= 0.5
    assert 0.5 <= s < 1.0


def test_semantic_empty_stems_neutral():
    it = make_item(stem="")
    assert semantic_similarity(InteractionInput(it), record(it), EMB) == 0.5


def test_vectorized_scores_match_scalar():
    items = [make_item(f"q{i}", a=0.5 + i * 0.3, b=-1 + i * 0.5, stem=f"stem {i} words") for i in range(5)]
    recs = [record(it, t) for t, it in enumerate(items)]
    q = InteractionInput(make_item("q", a=1.1, b=0.2, stem="stem 2 other words"))
    got = score_records(recs, q, 0.3, HP, EMB)
    want = [hybrid_score(q, r, 0.3, HP, EMB) for r in recs]
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_retrieve_empty_bank_conflict():
    out = retrieve(MemoryBank(), InteractionInput(make_item()), 0.0, 1.0, HP, EMB)
    assert isinstance(out, Conflict) and out.max_score == 0.0


def test_retrieve_identical_item_assimilates():
    it = make_item()
    bank = store(MemoryBank(), record(it, 0))
    out = retrieve(bank, InteractionInput(it), 0.0, 1.0, HP, EMB)
    assert isinstance(out, Assimilation) and out.score == pytest.approx(1.0)


def test_retrieve_ties_go_to_most_recent():
    it = make_item()
    bank = store(store(MemoryBank(), record(it, 0)), record(it, 5))
    out = retrieve(bank, InteractionInput(it), 0.0, 1.0, HP, EMB)
    assert out.best.timestamp == 5


def test_retrieve_threshold_is_strict():
    it = make_item()
    bank = store(MemoryBank(), record(it, 0))
    out = retrieve(bank, InteractionInput(it), 0.0, 1.0, HyperParams(tau_retrieval=1.0), EMB)
    assert isinstance(out, Conflict) and out.max_score == pytest.approx(1.0)


def test_conflict_labels():
    assert conflict_state(OMEGA_STAR, 0.2).label == CognitiveLabel.CONFUSED
    assert conflict_state(OMEGA_STAR - 0.01, 0.2).label == CognitiveLabel.EXPLORING
    s = conflict_state(3.0, 0.4)
    assert s.confidence == 0.4 and s.arousal == 1.0


def test_store_ordering_and_capacity():
    it = make_item()
    bank = MemoryBank(capacity=2)
    for t in (1, 2, 3):
        bank = store(bank, record(it, t))
    assert [r.timestamp for r in bank.records] == [2, 3]
    with pytest.raises(ValueError):
        store(bank, record(it, 3))
    with pytest.raises(ValueError):
        MemoryBank(capacity=0)
