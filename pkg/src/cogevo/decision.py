"""External behavior: response choice, mastery confidence and behavior/state alignment."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .core import CognitiveState, HyperParams, Item, KnowledgeStructure, ability_from_knowledge
from .retrieval import icc

# confidence blend: gain 0.5 + 0.5*c on the curve, shift 0.25*(c - 0.5)
CONF_GAIN_BASE = 0.5
CONF_GAIN_SLOPE = 0.5
CONF_SHIFT = 0.25


class MalformedItemError(ValueError):
    pass


@dataclass(frozen=True)
class Response:
    chosen_option: int
    is_correct: bool
    misconception_tag: Optional[str] = None
    elaboration: str = ""

    def __post_init__(self):
        if self.is_correct == (self.misconception_tag is not None):
            raise ValueError("misconception_tag must be present iff the response is incorrect")


@dataclass(frozen=True)
class ConfidenceReport:
    p_hat: float
    flagged_low_confidence: bool
    delta_align: float


def mastery_confidence(k_next: KnowledgeStructure, item: Item, state: CognitiveState) -> float:
    p = float(icc(item, ability_from_knowledge(k_next, item.concept_weights)))
    c = state.confidence
    raw = p * (CONF_GAIN_BASE + CONF_GAIN_SLOPE * c) + CONF_SHIFT * (c - 0.5)
    return min(1.0, max(0.0, raw))


def tag_concepts_from_item(item: Item) -> dict[str, int]:
    """Fallback concept map for tags of the form ``c<idx>:<kind>``."""
    out = {}
    for opt in item.options:
        tag = opt.misconception_tag
        if tag and tag.startswith("c") and ":" in tag:
            try:
                out[tag] = int(tag[1:tag.index(":")])
            except ValueError:
                pass
    return out


def weakest_distractor(k_next: KnowledgeStructure, item: Item, tag_concept: Mapping[str, int]) -> int:
    """Distractor tied to the least-mastered concept the item exercises.

    Concepts are visited from weakest to strongest (ties by concept index); the
    first one owning a distractor wins, ties between distractors by option
    index. Items whose tags map to none of their concepts fall back to the
    first distractor.
    """
    distractors = [i for i in range(len(item.options)) if i != item.correct_option]
    concepts = item.concepts
    order = concepts[np.lexsort((concepts, k_next.mastery[concepts]))]
    for c in order:
        for i in distractors:
            if tag_concept.get(item.options[i].misconception_tag) == c:
                return i
    return distractors[0]


@dataclass
class MistakeProfile:
    """Counts of past misconception tags, by exact tag, concept and kind."""

    tags: Counter = field(default_factory=Counter)
    concepts: Counter = field(default_factory=Counter)
    kinds: Counter = field(default_factory=Counter)

    def add(self, tag: str, concept: Optional[int]) -> None:
        self.tags[tag] += 1
        if concept is not None:
            self.concepts[concept] += 1
        self.kinds[tag.split(":", 1)[-1]] += 1

    def __bool__(self) -> bool:
        return bool(self.tags)


def recalled_distractor(item: Item, tag_concept: Mapping[str, int], profile: MistakeProfile) -> Optional[int]:
    """Distractor the profile makes most likely; None when memory holds no mistakes.

    Concept and kind evidence combine multiplicatively (add-one smoothed),
    exact-tag repeats break ties, then option index.
    """
    if not profile:
        return None
    best, best_key = None, None
    for i, opt in enumerate(item.options):
        tag = opt.misconception_tag
        if i == item.correct_option or tag is None:
            continue
        kind = tag.split(":", 1)[-1]
        score = (profile.concepts[tag_concept.get(tag)] + 1) * (profile.kinds[kind] + 1)
        key = (score, profile.tags[tag])
        if best_key is None or key > best_key:
            best, best_key = i, key
    return best


def decide(
    k_next: KnowledgeStructure,
    item: Item,
    p_hat: float,
    seed: int,
    tag_concept: Optional[Mapping[str, int]] = None,
    recalled: Optional[MistakeProfile] = None,
) -> Response:
    """Draw correctness from ``p_hat``; on an error pick a distractor.

    ``recalled`` is an optional profile of past mistakes taken from memory;
    when it points at one of the item's distractors that one is chosen,
    otherwise the distractor of the weakest concept.
    """
    if len(item.options) < 2:
        raise MalformedItemError(f"item {item.id} needs at least two options")
    if item.concept_weights.size != k_next.dim:
        raise MalformedItemError(f"item {item.id} concept dimension does not match knowledge")
    tag_concept = tag_concept if tag_concept is not None else tag_concepts_from_item(item)
    rng = np.random.default_rng(seed)
    if rng.random() < p_hat:
        return Response(item.correct_option, True, None, f"Applied the known method for {item.id}.")
    i = recalled_distractor(item, tag_concept, recalled) if recalled else None
    if i is None:
        i = weakest_distractor(k_next, item, tag_concept)
    tag = item.options[i].misconception_tag
    return Response(i, False, tag, f"Chose option {i} reasoning via {tag}.")


def behavior_embedding(r: Response, p_hat: float) -> np.ndarray:
    corr = 1.0 if r.is_correct else 0.0
    return np.array([p_hat, corr, 1.0 - p_hat * corr])


def state_embedding(c: CognitiveState) -> np.ndarray:
    return np.array([c.confidence, 1.0 - c.arousal, 1.0 - c.confidence])


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = math.sqrt(float(u @ u)), math.sqrt(float(v @ v))
    if nu == 0 or nv == 0:
        return 0.0
    return max(-1.0, min(1.0, float(u @ v) / (nu * nv)))


def alignment(r: Response, p_hat: float, c_next: CognitiveState, hp: HyperParams) -> ConfidenceReport:
    delta = cosine(behavior_embedding(r, p_hat), state_embedding(c_next))
    return ConfidenceReport(p_hat, delta < hp.tau_align, delta)
