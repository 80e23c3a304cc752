import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cogevo.core import (
    AgentState,
    CognitiveState,
    DimensionError,
    HyperParams,
    InteractionInput,
    Item,
    KnowledgeStructure,
    Option,
    Persona,
    ability_from_knowledge,
    clamp_knowledge,
    softplus,
)

from conftest import make_item

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_knowledge_rejects_out_of_range():
    with pytest.raises(ValueError):
        KnowledgeStructure([0.2, 1.5])
    with pytest.raises(DimensionError):
        KnowledgeStructure(np.zeros((2, 2)))


def test_knowledge_is_read_only():
    k = KnowledgeStructure([0.1, 0.2])
    with pytest.raises(ValueError):
        k.mastery[0] = 0.5


@given(arrays(float, st.integers(1, 32), elements=finite))
def test_clamp_is_idempotent_and_in_range(x):
    once = clamp_knowledge(x)
    assert once == clamp_knowledge(once)
    assert once.mastery.min() >= 0 and once.mastery.max() <= 1


def test_clamp_examples():
    assert clamp_knowledge([-0.2, 0.5, 1.7]).tolist() == [0.0, 0.5, 1.0]


def test_ability_endpoints():
    assert ability_from_knowledge([0.0, 0.0]) == -3.0
    assert ability_from_knowledge([1.0, 1.0]) == 3.0
    assert ability_from_knowledge([0.5]) == 0.0


def test_ability_weighted_uses_item_concepts():
    k = [1.0, 0.0, 0.0]
    assert ability_from_knowledge(k, [1.0, 0.0, 0.0]) == 3.0
    assert ability_from_knowledge(k, [0.0, 0.5, 0.5]) == -3.0
    with pytest.raises(DimensionError):
        ability_from_knowledge(k, [1.0, 0.0])
    with pytest.raises(DimensionError):
        ability_from_knowledge([])


@given(arrays(float, st.integers(1, 16), elements=st.floats(0, 1)))
def test_ability_in_theta_range(m):
    th = ability_from_knowledge(m)
    assert -3.0 - 1e-12 <= th <= 3.0 + 1e-12


@settings(max_examples=1000)
@given(finite)
def test_softplus_positive_and_matches_log1p(x):
    y = softplus(x)
    assert y > 0 or x < -700
    assert math.isclose(y, np.logaddexp(0.0, x), rel_tol=1e-12, abs_tol=1e-300)


def test_softplus_large_argument_no_overflow():
    assert softplus(1e6) == 1e6
    assert softplus(0.0) == pytest.approx(math.log(2))


def test_agent_theta_is_derived():
    a = AgentState(Persona("s"), CognitiveState(), KnowledgeStructure([0.75, 0.75]))
    assert a.theta == pytest.approx(1.5)


def test_persona_validation():
    with pytest.raises(ValueError):
        Persona("x", baseline_ability=4.0)
    with pytest.raises(ValueError):
        Persona("x", emotion_reactivity=-1)


def test_cognitive_state_bounds():
    with pytest.raises(ValueError):
        CognitiveState(confidence=1.2)
    assert CognitiveState("Flow").label.value == "Flow"


def test_item_validation():
    ok = make_item()
    assert ok.top_concept == 0 and list(ok.concepts) == [0]
    with pytest.raises(ValueError):
        Item("x", "s", (Option("a"), Option("b", "t")), 0, 0.0, 0.0, np.array([1.0]))
    with pytest.raises(ValueError):
        Item("x", "s", (Option("a"), Option("b", "t")), 0, 1.0, 0.0, np.array([0.6, 0.6]))
    with pytest.raises(ValueError):
        Item("x", "s", (Option("a", "t"), Option("b", "u")), 0, 1.0, 0.0, np.array([1.0]))
    with pytest.raises(ValueError):
        Item("x", "s", (Option("a"), Option("b")), 0, 1.0, 0.0, np.array([1.0]))


def test_interaction_input_rejects_negative_latency(item):
    with pytest.raises(ValueError):
        InteractionInput(item, latency_ms=-1)
    assert InteractionInput(item, "Reading").interaction_kind.value == "Reading"


def test_hyperparams_defaults_and_validation():
    hp = HyperParams()
    assert hp.v == (0.5, 1.0, 1.5, 2.0)
    assert (hp.alpha_sem, hp.beta_struct, hp.tau_retrieval) == (0.5, 0.5, 0.75)
    assert (hp.lambda_pop, hp.tournament_size, hp.sigma_base) == (8, 3, 0.15)
    assert (hp.zpd_lo, hp.zpd_hi, hp.gamma) == (0.02, 0.5, 1.0)
    with pytest.raises(ValueError, match="alpha_sem"):
        HyperParams(alpha_sem=0.7)
    with pytest.raises(ValueError):
        HyperParams(zpd_lo=0.6, zpd_hi=0.5)
    with pytest.raises(ValueError):
        HyperParams(lambda_pop=0)
