"""IRT-grounded memory retrieval.

Scoring a memory against the current question mixes a text-embedding
similarity of the two item stems with a structural similarity: how close the
two items' 2PL characteristic curves are in a window around the learner's
current ability. Scores above ``tau_retrieval`` reuse the old schema
(assimilation); otherwise the agent enters a conflict state.
"""

from __future__ import annotations

import json
import urllib.request
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Protocol, Sequence, Union

import numpy as np
from scipy.special import expit

from .core import CognitiveLabel, CognitiveState, HyperParams, InteractionInput, Item, softplus
from .icap import IcapDistribution, hashed_bag

SIMPSON_INTERVALS = 64
EMBED_DIM = 64
# conflict is labelled Confused at or above the rate of a one-hot Active learner
OMEGA_STAR = softplus(1.0)


class TextEmbedder(Protocol):
    def embed(self, text: str) -> np.ndarray: ...


class HashedBagEmbedder:
    """64-bucket FNV-1a bag of words; deterministic and dependency-free."""

    def __init__(self, dim: int = EMBED_DIM):
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        return hashed_bag(text, self.dim)


class RemoteEmbedder:
    """POST {"text": ...} -> {"vector": [...]}. Not used by the offline core."""

    def __init__(self, url: str, timeout: float = 10.0):
        self.url = url
        self.timeout = timeout
        self._cached = lru_cache(maxsize=4096)(self._fetch)

    def _fetch(self, text: str) -> tuple[float, ...]:
        req = urllib.request.Request(
            self.url,
            data=json.dumps({"text": text}).encode("utf-8"),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            doc = json.loads(resp.read().decode("utf-8"))
        return tuple(float(x) for x in doc["vector"])

    def embed(self, text: str) -> np.ndarray:
        return np.array(self._cached(text))


@dataclass(frozen=True)
class MemoryRecord:
    input: InteractionInput
    response: "Response"  # noqa: F821  (decision.Response; kept loose to avoid a cycle)
    state: CognitiveState
    level: IcapDistribution
    timestamp: int


@dataclass(frozen=True)
class MemoryBank:
    records: tuple[MemoryRecord, ...] = ()
    capacity: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if self.capacity is not None and self.capacity < 1:
            raise ValueError("capacity must be >= 1")

    def __len__(self):
        return len(self.records)


@dataclass(frozen=True)
class Assimilation:
    best: MemoryRecord
    score: float


@dataclass(frozen=True)
class Conflict:
    new_state: CognitiveState
    max_score: float = 0.0


RetrievalOutcome = Union[Assimilation, Conflict]


def icc(item: Item, theta):
    """2PL item characteristic curve."""
    return expit(item.irt_a * (np.asarray(theta, dtype=float) - item.irt_b))


def _simpson_weights(n: int = SIMPSON_INTERVALS) -> np.ndarray:
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w


_SIMPSON_W = _simpson_weights()


def simpson(y, a: float, b: float) -> np.ndarray:
    """Composite Simpson over the last axis of ``y`` sampled on linspace(a, b, 65)."""
    h = (b - a) / SIMPSON_INTERVALS
    return np.asarray(y) @ _SIMPSON_W * (h / 3.0)


def _structural(a_q, b_q, a_m, b_m, theta_t: float, hp: HyperParams) -> np.ndarray:
    """exp(-k * mean |P_q - P_m|) over the ability window, one value per memory.

    |P_q - P_m| has a kink where the two curves cross, which costs Simpson
    its accuracy; two 2PL curves cross at most once, so the window is split
    there and each smooth piece gets its own composite rule.
    """
    d = hp.delta_theta
    lo, hi = theta_t - d, theta_t + d
    a_m = np.asarray(a_m, dtype=float)
    b_m = np.asarray(b_m, dtype=float)
    da = a_q - a_m
    with np.errstate(divide="ignore", invalid="ignore"):
        cross = np.where(da != 0, (a_q * b_q - a_m * b_m) / np.where(da != 0, da, 1.0), hi)
    cut = np.clip(cross, lo, hi)
    u = np.linspace(0.0, 1.0, SIMPSON_INTERVALS + 1)
    total = np.zeros(a_m.shape)
    for left, right in ((np.full(a_m.shape, lo), cut), (cut, np.full(a_m.shape, hi))):
        width = right - left
        grid = left[:, None] + width[:, None] * u
        diff = np.abs(expit(a_m[:, None] * (grid - b_m[:, None])) - expit(a_q * (grid - b_q)))
        total += diff @ _SIMPSON_W * (width / (3.0 * SIMPSON_INTERVALS))
    return np.exp(-hp.k_struct * total / (2 * d))


def structural_similarity(i: Item, j: Item, theta_t: float, hp: HyperParams) -> float:
    if hp.delta_theta <= 0:
        raise ValueError("delta_theta must be > 0")
    return float(_structural(i.irt_a, i.irt_b, [j.irt_a], [j.irt_b], theta_t, hp)[0])


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(u @ v / (nu * nv))


def _semantic_from_vectors(q_vec: np.ndarray, m_vecs: np.ndarray) -> np.ndarray:
    nq = np.linalg.norm(q_vec)
    nm = np.linalg.norm(m_vecs, axis=1)
    denom = nq * nm
    cos = np.divide(m_vecs @ q_vec, denom, out=np.zeros(len(m_vecs)), where=denom > 0)
    return (1.0 + np.clip(cos, -1.0, 1.0)) / 2.0


def semantic_similarity(q: InteractionInput, m: MemoryRecord, embedder: TextEmbedder) -> float:
    """Cosine of stem embeddings mapped to [0, 1]; 0.5 is the neutral value."""
    a, b = q.item.stem_text, m.input.item.stem_text
    if not a.strip() and not b.strip():
        return 0.5
    cos = _cosine(embedder.embed(a), embedder.embed(b))
    return (1.0 + max(-1.0, min(1.0, cos))) / 2.0


def score_records(
    records: Sequence[MemoryRecord],
    q: InteractionInput,
    theta_t: float,
    hp: HyperParams,
    embedder: TextEmbedder,
) -> np.ndarray:
    """Hybrid scores of every record against ``q``, in record order."""
    if not records:
        return np.zeros(0)
    items = [r.input.item for r in records]
    struct = np.ones(len(items))
    if hp.beta_struct > 0:
        struct = _structural(
            q.item.irt_a, q.item.irt_b,
            [it.irt_a for it in items], [it.irt_b for it in items],
            theta_t, hp,
        )
    sem = np.full(len(items), 0.5)
    if hp.alpha_sem > 0:
        q_vec = embedder.embed(q.item.stem_text)
        m_vecs = np.vstack([embedder.embed(it.stem_text) for it in items])
        sem = _semantic_from_vectors(q_vec, m_vecs)
    return hp.alpha_sem * sem + hp.beta_struct * struct


def hybrid_score(
    q: InteractionInput,
    m: MemoryRecord,
    theta_t: float,
    hp: HyperParams,
    embedder: TextEmbedder,
) -> float:
    return (
        hp.alpha_sem * semantic_similarity(q, m, embedder)
        + hp.beta_struct * structural_similarity(q.item, m.input.item, theta_t, hp)
    )


def conflict_state(omega_L: float, max_score: float) -> CognitiveState:
    label = CognitiveLabel.CONFUSED if omega_L >= OMEGA_STAR else CognitiveLabel.EXPLORING
    return CognitiveState(label, min(1.0, max(0.0, max_score)), min(1.0, omega_L / 2.0))


def retrieve(
    bank: MemoryBank,
    q: InteractionInput,
    theta_t: float,
    omega_L: float,
    hp: HyperParams,
    embedder: TextEmbedder,
) -> RetrievalOutcome:
    scores = score_records(bank.records, q, theta_t, hp, embedder)
    if scores.size == 0:
        return Conflict(conflict_state(omega_L, 0.0), 0.0)
    # last occurrence of the max: ties go to the most recent memory
    best = len(scores) - 1 - int(np.argmax(scores[::-1]))
    top = float(scores[best])
    if top > hp.tau_retrieval:
        return Assimilation(bank.records[best], top)
    return Conflict(conflict_state(omega_L, top), top)


def store(bank: MemoryBank, rec: MemoryRecord) -> MemoryBank:
    if bank.records and rec.timestamp <= bank.records[-1].timestamp:
        raise ValueError(
            f"timestamp {rec.timestamp} not after last stored {bank.records[-1].timestamp}"
        )
    records = bank.records + (rec,)
    if bank.capacity is not None and len(records) > bank.capacity:
        records = records[len(records) - bank.capacity:]
    return MemoryBank(records, bank.capacity)
