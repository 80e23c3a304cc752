"""Mutation, ZPD-constrained fitness, tournament selection and differential inheritance."""

from __future__ import annotations

import enum
import json
import math
import urllib.request
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .core import (
    CognitiveState,
    HyperParams,
    InteractionInput,
    KnowledgeStructure,
    ability_from_knowledge,
    clamp_knowledge,
)
from .retrieval import icc


class RationaleTag(str, enum.Enum):
    FORMULA_DOUBT = "FormulaDoubt"
    NEW_TYPE_GUESS = "NewTypeGuess"
    SLIP_GUESS = "SlipGuess"
    RANDOM = "Random"


RATIONALE_TAGS = tuple(RationaleTag)


@dataclass(frozen=True)
class Hypothesis:
    knowledge: KnowledgeStructure
    rationale_tag: RationaleTag = RationaleTag.RANDOM
    origin_index: int = 0


@dataclass(frozen=True)
class ZpdRegion:
    r_lo: float
    r_hi: float

    def __post_init__(self):
        if not 0 <= self.r_lo < self.r_hi:
            raise ValueError("ZPD radii need 0 <= r_lo < r_hi")

    @classmethod
    def from_hyper(cls, hp: HyperParams) -> ZpdRegion:
        return cls(hp.zpd_lo, hp.zpd_hi)


class HypothesisGenerator(Protocol):
    def generate(
        self, k: KnowledgeStructure, inp: InteractionInput, sigma: float, lam: int, seed: int
    ) -> list[Hypothesis]: ...


class GaussianGenerator:
    """Gaussian perturbations restricted to the concepts the item exercises."""

    def generate(self, k, inp, sigma, lam, seed):
        rng = np.random.default_rng(seed)
        mask = inp.item.concept_weights > 0
        eps = rng.standard_normal((lam, k.dim)) * mask
        tags = rng.integers(0, len(RATIONALE_TAGS), size=lam)
        base = k.mastery
        return [
            Hypothesis(clamp_knowledge(base + sigma * eps[j]), RATIONALE_TAGS[tags[j]], j)
            for j in range(lam)
        ]


class RemoteGenerator:
    """Delegates hypothesis generation to an HTTP service (e.g. an LLM wrapper).

    Request: {"knowledge": [...], "item_stem": str, "sigma": float, "lambda": n}
    Reply:   {"hypotheses": [{"knowledge": [...], "tag": str}, ...]}
    Unknown tags map to Random; the reply must carry exactly ``lambda`` entries.
    """

    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url
        self.timeout = timeout

    def generate(self, k, inp, sigma, lam, seed):
        body = {"knowledge": k.tolist(), "item_stem": inp.item.stem_text, "sigma": sigma, "lambda": lam}
        req = urllib.request.Request(
            self.url, data=json.dumps(body).encode("utf-8"),
            headers={"Content-Type": "application/json"}, method="POST",
        )
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            doc = json.loads(resp.read().decode("utf-8"))
        return parse_remote_hypotheses(doc, k.dim, lam)


def parse_remote_hypotheses(doc: dict, dim: int, lam: int) -> list[Hypothesis]:
    hyps = doc.get("hypotheses")
    if not isinstance(hyps, list) or len(hyps) != lam:
        raise ValueError(f"remote generator must return exactly {lam} hypotheses")
    out = []
    for j, h in enumerate(hyps):
        vec = np.asarray(h["knowledge"], dtype=float)
        if vec.shape != (dim,):
            raise ValueError(f"hypothesis {j} has length {vec.size}, expected {dim}")
        try:
            tag = RationaleTag(h.get("tag", "Random"))
        except ValueError:
            tag = RationaleTag.RANDOM
        out.append(Hypothesis(clamp_knowledge(vec), tag, j))
    return out


def effective_sigma(hp: HyperParams, state: CognitiveState) -> float:
    return hp.sigma_base * (1.0 + state.arousal)


def generate_hypotheses(
    k: KnowledgeStructure,
    inp: InteractionInput,
    state: CognitiveState,
    hp: HyperParams,
    seed: int,
    generator: HypothesisGenerator | None = None,
) -> list[Hypothesis]:
    if hp.lambda_pop < 1:
        raise ValueError("lambda_pop must be >= 1")
    gen = generator or GaussianGenerator()
    hyps = gen.generate(k, inp, effective_sigma(hp, state), hp.lambda_pop, seed)
    if len(hyps) != hp.lambda_pop:
        raise ValueError(f"generator returned {len(hyps)} hypotheses, expected {hp.lambda_pop}")
    return hyps


def consistency(h: Hypothesis, inp: InteractionInput) -> float:
    """How well the hypothesis explains the observed outcome (0.5 target when unobserved)."""
    theta = ability_from_knowledge(h.knowledge, inp.item.concept_weights)
    y = 0.5 if inp.observed_correct is None else float(inp.observed_correct)
    return 1.0 - abs(float(icc(inp.item, theta)) - y)


def zpd_distance(h: Hypothesis | KnowledgeStructure, k: KnowledgeStructure) -> float:
    """Euclidean distance normalized by sqrt(d)."""
    hk = h.knowledge if isinstance(h, Hypothesis) else h
    return float(np.linalg.norm(hk.mastery - k.mastery)) / math.sqrt(k.dim)


def hinge(d: float, zpd: ZpdRegion) -> float:
    return max(0.0, d - zpd.r_hi) + max(0.0, zpd.r_lo - d)


def zpd_penalty(h: Hypothesis, k: KnowledgeStructure, zpd: ZpdRegion) -> float:
    return hinge(zpd_distance(h, k), zpd)


def fitness(h: Hypothesis, inp: InteractionInput, k: KnowledgeStructure, hp: HyperParams, zpd: ZpdRegion) -> float:
    return consistency(h, inp) - hp.gamma * zpd_penalty(h, k, zpd)


def select(pop: Sequence[Hypothesis], fitnesses: Sequence[float], hp: HyperParams, seed: int) -> Hypothesis:
    if not pop:
        raise ValueError("cannot select from an empty population")
    if len(pop) != len(fitnesses):
        raise ValueError("population and fitness lengths differ")
    if hp.tournament_size >= len(pop):
        contestants = range(len(pop))
    else:
        rng = np.random.default_rng(seed)
        contestants = rng.integers(0, len(pop), size=hp.tournament_size).tolist()
    best = min(contestants, key=lambda i: (-fitnesses[i], pop[i].origin_index))
    return pop[best]


def step_size(omega_L: float, hp: HyperParams) -> float:
    s = hp.eta_step * omega_L
    return s if hp.uncapped_step else min(1.0, s)


def evolve(k: KnowledgeStructure, winner: Hypothesis, omega_L: float, hp: HyperParams) -> KnowledgeStructure:
    if not omega_L > 0:
        raise ValueError("omega_L must be > 0")
    s = step_size(omega_L, hp)
    return clamp_knowledge(k.mastery + s * (winner.knowledge.mastery - k.mastery))
