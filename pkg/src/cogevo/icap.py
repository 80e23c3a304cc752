"""ICAP engagement perception: feature encoding, level distribution, evolution rate."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .core import INTERACTION_KINDS, DimensionError, InteractionInput, softplus
from .seeding import fnv1a_32

ICAP_LEVELS = ("Passive", "Active", "Constructive", "Interactive")
ICAP_CODES = ("P", "A", "C", "I")
DEFAULT_GAINS = (0.5, 1.0, 1.5, 2.0)

N_KIND = 4
BAG_DIM = 32
N_FEATURES = N_KIND + 1 + 2 + BAG_DIM  # 39
LATENCY_COL = N_KIND
LENGTH_COL = N_KIND + 1
TTR_COL = N_KIND + 2
BAG_START = N_KIND + 3
# reflection length saturates at this many tokens
LENGTH_SCALE = 40.0


def tokenize(text: str) -> list[str]:
    return text.lower().split()


@lru_cache(maxsize=65536)
def _hashed_bag(text: str, dim: int) -> tuple[float, ...]:
    vec = np.zeros(dim)
    for tok in tokenize(text):
        vec[fnv1a_32(tok.encode("utf-8")) % dim] += 1.0
    n = np.linalg.norm(vec)
    if n > 0:
        vec /= n
    return tuple(vec)


def hashed_bag(text: str, dim: int) -> np.ndarray:
    """FNV-1a hashed bag of lowercase whitespace tokens, L2-normalized (zero if empty)."""
    return np.array(_hashed_bag(text, dim))


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=float)
        if arr.shape != (N_FEATURES,):
            raise DimensionError(f"feature vector must have length {N_FEATURES}")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)


@dataclass(frozen=True, eq=False)
class IcapDistribution:
    probs: np.ndarray

    def __post_init__(self):
        arr = np.array(self.probs, dtype=float)
        if arr.shape != (4,):
            raise DimensionError("ICAP distribution has exactly 4 levels")
        if (arr < 0).any() or (arr > 1).any() or abs(arr.sum() - 1) > 1e-9:
            raise ValueError("ICAP probabilities must lie in [0,1] and sum to 1")
        arr.setflags(write=False)
        object.__setattr__(self, "probs", arr)

    @classmethod
    def uniform(cls) -> IcapDistribution:
        return cls(np.full(4, 0.25))

    @property
    def argmax_code(self) -> str:
        return ICAP_CODES[int(np.argmax(self.probs))]


@dataclass(frozen=True, eq=False)
class PerceptronWeights:
    w: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        b = np.array(self.b, dtype=float)
        if w.ndim != 2 or w.shape[0] != 4 or b.shape != (4,):
            raise DimensionError("weights must be 4xF with a length-4 bias")
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise ValueError("perceptron weights must be finite")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", b)

    @classmethod
    def default(cls) -> PerceptronWeights:
        w = np.zeros((4, N_FEATURES))
        w[0, 0] = 3.0  # Reading -> Passive
        w[1, 1] = 3.0  # Questioning -> Active
        w[2, 2] = 3.0  # SelfExplanation -> Constructive
        w[2, LENGTH_COL] = 1.0
        w[3, LENGTH_COL] = 1.0
        return cls(w, np.zeros(4))


def load_weights(path) -> tuple[PerceptronWeights, tuple[float, ...]]:
    """Read ``{"w": [[...]x4], "b": [...], "v": [...]}``; ``v`` is optional."""
    doc = json.loads(Path(path).read_text())
    weights = PerceptronWeights(doc["w"], doc["b"])
    v = tuple(float(x) for x in doc.get("v", DEFAULT_GAINS))
    if len(v) != 4:
        raise DimensionError("gain vector v must have 4 entries")
    return weights, v


def encode_features(inp: InteractionInput) -> FeatureVector:
    f = np.zeros(N_FEATURES)
    f[INTERACTION_KINDS.index(inp.interaction_kind)] = 1.0
    f[LATENCY_COL] = math.log1p(inp.latency_ms / 1000.0)
    toks = tokenize(inp.reflection_text)
    if toks:
        f[LENGTH_COL] = min(1.0, len(toks) / LENGTH_SCALE)
        f[TTR_COL] = len(set(toks)) / len(toks)
    f[BAG_START:] = hashed_bag(inp.reflection_text, BAG_DIM)
    return FeatureVector(f)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def icap_distribution(f: FeatureVector | np.ndarray, w: PerceptronWeights) -> IcapDistribution:
    x = f.values if isinstance(f, FeatureVector) else np.asarray(f, dtype=float)
    if x.shape != (w.w.shape[1],):
        raise DimensionError(f"feature length {x.shape} does not match weights {w.w.shape}")
    return IcapDistribution(softmax(w.w @ x + w.b))


def evolution_rate(y: IcapDistribution | np.ndarray, v=DEFAULT_GAINS) -> float:
    """SoftPlus of the gain-weighted ICAP intensity; always > 0."""
    p = y.probs if isinstance(y, IcapDistribution) else np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    if not np.isfinite(v).all():
        raise ValueError("gain vector must be finite")
    return softplus(float(v @ p))


class InteractionFeaturizer(TransformerMixin, BaseEstimator):
    """Stateless transformer: list of InteractionInput -> (n, 39) feature matrix."""

    def fit(self, X, y=None):
        self.n_features_out_ = N_FEATURES
        return self

    def transform(self, X):
        return np.vstack([encode_features(x).values for x in X]) if len(X) else np.zeros((0, N_FEATURES))


class IcapPerceptron(BaseEstimator):
    """Fixed-weight ICAP perceptron with a scikit-learn face.

    There is no training loop: ``fit`` only validates and materializes the
    weights. ``predict_proba`` returns the level distribution per row and
    ``transform`` the evolution rate per row.
    """

    classes_ = np.array(ICAP_CODES)

    def __init__(self, weights=None, gains=DEFAULT_GAINS):
        self.weights = weights
        self.gains = gains

    def fit(self, X=None, y=None):
        self.weights_ = self.weights if self.weights is not None else PerceptronWeights.default()
        self.gains_ = np.asarray(self.gains, dtype=float)
        return self

    def _features(self, X):
        if len(X) and isinstance(X[0], InteractionInput):
            return InteractionFeaturizer().fit_transform(X)
        return np.atleast_2d(np.asarray(X, dtype=float))

    def predict_proba(self, X):
        if not hasattr(self, "weights_"):
            self.fit()
        F = self._features(X)
        logits = F @ self.weights_.w.T + self.weights_.b
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def transform(self, X):
        P = self.predict_proba(X)
        return np.array([softplus(float(s)) for s in P @ self.gains_])
