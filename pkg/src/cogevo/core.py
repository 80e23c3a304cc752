"""Shared domain types and numeric primitives.

Every value object here is frozen; "mutation" means building a new value.
Knowledge vectors are stored as read-only numpy arrays so they can be shared
between steps without defensive copies.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields
from typing import Mapping, Optional, Sequence

import numpy as np

TOL = 1e-9
THETA_MIN = -3.0
THETA_MAX = 3.0


class DimensionError(ValueError):
    """Raised when a vector has the wrong (or zero) length."""


def _frozen_array(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Persona:
    id: str
    baseline_ability: float = 0.0
    emotion_reactivity: float = 1.0
    static_traits: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not THETA_MIN <= self.baseline_ability <= THETA_MAX:
            raise ValueError(f"baseline_ability {self.baseline_ability} outside [-3, 3]")
        if self.emotion_reactivity < 0:
            raise ValueError("emotion_reactivity must be >= 0")


@dataclass(frozen=True, eq=False)
class KnowledgeStructure:
    """Per-concept mastery vector, each entry in [0, 1]."""

    mastery: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.mastery)
        if arr.ndim != 1:
            raise DimensionError("mastery must be a 1-d vector")
        if arr.size and (arr.min() < -TOL or arr.max() > 1 + TOL):
            raise ValueError("mastery components must lie in [0, 1]")
        object.__setattr__(self, "mastery", arr)

    @property
    def dim(self) -> int:
        return int(self.mastery.size)

    def __eq__(self, other):
        if not isinstance(other, KnowledgeStructure):
            return NotImplemented
        return np.array_equal(self.mastery, other.mastery)

    def __hash__(self):
        return hash(self.mastery.tobytes())

    def tolist(self) -> list[float]:
        return [float(x) for x in self.mastery]


class CognitiveLabel(str, enum.Enum):
    STABLE = "Stable"
    EXPLORING = "Exploring"
    CONFUSED = "Confused"
    FLOW = "Flow"
    FRUSTRATED = "Frustrated"


@dataclass(frozen=True)
class CognitiveState:
    label: CognitiveLabel = CognitiveLabel.STABLE
    confidence: float = 0.5
    arousal: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "label", CognitiveLabel(self.label))
        for name in ("confidence", "arousal"):
            v = getattr(self, name)
            if not -TOL <= v <= 1 + TOL:
                raise ValueError(f"{name}={v} outside [0, 1]")


@dataclass(frozen=True)
class AgentState:
    persona: Persona
    cognitive: CognitiveState
    knowledge: KnowledgeStructure
    theta: float = float("nan")

    def __post_init__(self):
        # theta is derived; callers never get to set it inconsistently
        object.__setattr__(self, "theta", ability_from_knowledge(self.knowledge))


@dataclass(frozen=True)
class Option:
    text: str
    misconception_tag: Optional[str] = None


@dataclass(frozen=True, eq=False)
class Item:
    id: str
    stem_text: str
    options: tuple[Option, ...]
    correct_option: int
    irt_a: float
    irt_b: float
    concept_weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "options", tuple(self.options))
        w = _frozen_array(self.concept_weights)
        object.__setattr__(self, "concept_weights", w)
        if self.irt_a <= 0:
            raise ValueError(f"item {self.id}: irt_a must be > 0")
        if not 0 <= self.correct_option < len(self.options):
            raise ValueError(f"item {self.id}: correct_option out of range")
        if (w < 0).any() or abs(w.sum() - 1.0) > TOL:
            raise ValueError(f"item {self.id}: concept_weights must be nonnegative and sum to 1")
        for i, opt in enumerate(self.options):
            if i == self.correct_option and opt.misconception_tag is not None:
                raise ValueError(f"item {self.id}: correct option carries a misconception tag")
            if i != self.correct_option and not opt.misconception_tag:
                raise ValueError(f"item {self.id}: distractor {i} has no misconception tag")

    @property
    def concepts(self) -> np.ndarray:
        """Indices of concepts with nonzero weight."""
        return np.flatnonzero(self.concept_weights > 0)

    @property
    def top_concept(self) -> int:
        return int(np.argmax(self.concept_weights))

    def __eq__(self, other):
        if not isinstance(other, Item):
            return NotImplemented
        return (
            self.id == other.id
            and self.stem_text == other.stem_text
            and self.options == other.options
            and self.correct_option == other.correct_option
            and self.irt_a == other.irt_a
            and self.irt_b == other.irt_b
            and np.array_equal(self.concept_weights, other.concept_weights)
        )

    def __hash__(self):
        return hash(self.id)


class InteractionKind(str, enum.Enum):
    READING = "Reading"
    QUESTIONING = "Questioning"
    SELF_EXPLANATION = "SelfExplanation"
    ANSWERING = "Answering"


INTERACTION_KINDS = tuple(InteractionKind)


@dataclass(frozen=True)
class InteractionInput:
    item: Item
    interaction_kind: InteractionKind = InteractionKind.ANSWERING
    latency_ms: int = 0
    reflection_text: str = ""
    observed_correct: Optional[bool] = None
    # replay only: the tag the student actually chose on an observed error
    observed_misconception: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "interaction_kind", InteractionKind(self.interaction_kind))
        if self.latency_ms < 0:
            raise ValueError("latency_ms must be >= 0")


@dataclass(frozen=True)
class HyperParams:
    v: tuple[float, float, float, float] = (0.5, 1.0, 1.5, 2.0)
    alpha_sem: float = 0.5
    beta_struct: float = 0.5
    tau_retrieval: float = 0.75
    delta_theta: float = 1.0
    k_struct: float = 3.0
    lambda_pop: int = 8
    sigma_base: float = 0.15
    gamma: float = 1.0
    zpd_lo: float = 0.02
    zpd_hi: float = 0.5
    eta_step: float = 0.5
    tournament_size: int = 3
    tau_align: float = 0.5
    # experimentation only: raw step 0.5*omega may exceed 1 and overshoot the winner
    uncapped_step: bool = False

    def __post_init__(self):
        object.__setattr__(self, "v", tuple(float(x) for x in self.v))
        problems = []
        if len(self.v) != 4 or not all(math.isfinite(x) for x in self.v):
            problems.append("v must be 4 finite numbers")
        for name in ("alpha_sem", "beta_struct", "tau_retrieval"):
            if not 0 <= getattr(self, name) <= 1:
                problems.append(f"{name} must lie in [0, 1]")
        if abs(self.alpha_sem + self.beta_struct - 1) > TOL:
            problems.append("alpha_sem + beta_struct must equal 1")
        for name in ("delta_theta", "k_struct", "sigma_base"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be > 0")
        if self.lambda_pop < 1:
            problems.append("lambda_pop must be >= 1")
        if self.tournament_size < 1:
            problems.append("tournament_size must be >= 1")
        if self.gamma < 0:
            problems.append("gamma must be >= 0")
        if not 0 <= self.zpd_lo < self.zpd_hi:
            problems.append("need 0 <= zpd_lo < zpd_hi")
        if not 0 < self.eta_step <= 1:
            problems.append("eta_step must lie in (0, 1]")
        if not -1 <= self.tau_align <= 1:
            problems.append("tau_align must lie in [-1, 1]")
        if problems:
            raise ValueError("; ".join(problems))

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["v"] = list(self.v)
        return out


def clamp_knowledge(k: KnowledgeStructure | Sequence[float] | np.ndarray) -> KnowledgeStructure:
    arr = k.mastery if isinstance(k, KnowledgeStructure) else np.asarray(k, dtype=float)
    return KnowledgeStructure(np.clip(arr, 0.0, 1.0))


def ability_from_knowledge(k: KnowledgeStructure | Sequence[float] | np.ndarray, weights=None) -> float:
    """Map mastery onto the IRT ability scale [-3, 3].

    Without ``weights`` this is the affine image of mean mastery. With
    ``weights`` (an item's concept weights) the mean is taken over the
    concepts the item actually exercises.
    """
    arr = k.mastery if isinstance(k, KnowledgeStructure) else np.asarray(k, dtype=float)
    if arr.size == 0:
        raise DimensionError("knowledge vector is empty")
    if weights is None:
        m = float(arr.mean())
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != arr.shape:
            raise DimensionError(f"weights length {w.size} != knowledge length {arr.size}")
        m = float(w @ arr / w.sum())
    return THETA_MIN + (THETA_MAX - THETA_MIN) * m


def softplus(x: float) -> float:
    # log1p(exp(x)) without overflow for large x
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))
