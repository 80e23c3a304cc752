"""Simulation config: a single JSON document, fully defaulted, unknown keys rejected."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .core import HyperParams


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class Ablation(str, enum.Enum):
    NO_ICAP = "no-icap"
    NO_META_RET = "no-meta-ret"
    NO_EVO_UPDATE = "no-evo-update"


@dataclass(frozen=True)
class SimulationConfig:
    item_bank_ref: str = ""
    dataset_ref: str = ""
    concept_dim: int = 16
    n_students: Optional[int] = None
    n_opportunities: Optional[int] = None
    hyper: HyperParams = field(default_factory=HyperParams)
    ablation: frozenset = frozenset()
    master_seed: int = 0
    generator_kind: str = "gaussian"
    generator_url: Optional[str] = None
    embedder_url: Optional[str] = None
    perceptron_weights: Optional[str] = None
    replay_outcomes: bool = True
    memory_capacity: Optional[int] = None
    snapshot_every: int = 1
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "ablation", frozenset(Ablation(a) for a in self.ablation))
        if self.concept_dim < 1:
            raise ConfigError("concept_dim", "must be >= 1")
        for name in ("n_students", "n_opportunities", "memory_capacity"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ConfigError(name, "must be >= 1")
        if self.generator_kind not in ("gaussian", "remote"):
            raise ConfigError("generator_kind", "must be 'gaussian' or 'remote'")
        if self.generator_kind == "remote" and not self.generator_url:
            raise ConfigError("generator_url", "required when generator_kind is 'remote'")
        if self.snapshot_every < 0:
            raise ConfigError("snapshot_every", "must be >= 0 (0 disables snapshots)")
        if self.jobs < 1:
            raise ConfigError("jobs", "must be >= 1")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed", "must be a 64-bit unsigned integer")

    def with_(self, **changes) -> SimulationConfig:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(changes)
        return SimulationConfig(**d)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["hyper"] = self.hyper.to_dict()
        out["ablation"] = sorted(a.value for a in self.ablation)
        return out


_TYPES = {
    "item_bank_ref": str, "dataset_ref": str, "concept_dim": int, "n_students": (int, type(None)),
    "n_opportunities": (int, type(None)), "master_seed": int, "generator_kind": str,
    "generator_url": (str, type(None)), "embedder_url": (str, type(None)),
    "perceptron_weights": (str, type(None)), "replay_outcomes": bool,
    "memory_capacity": (int, type(None)), "snapshot_every": int, "jobs": int, "ablation": list,
}
REQUIRED = ("item_bank_ref", "dataset_ref")


def _check_type(path, value, typ):
    types = typ if isinstance(typ, tuple) else (typ,)
    if isinstance(value, bool) and bool not in types:
        raise ConfigError(path, f"expected {'/'.join(t.__name__ for t in types)}, got bool")
    if float in types and isinstance(value, int) and not isinstance(value, bool):
        return
    if not isinstance(value, types):
        raise ConfigError(path, f"expected {'/'.join(t.__name__ for t in types)}, got {type(value).__name__}")


def hyper_from_dict(d: dict, path: str = "hyper") -> HyperParams:
    if not isinstance(d, dict):
        raise ConfigError(path, "must be an object")
    known = {f.name: f for f in fields(HyperParams)}
    for k, v in d.items():
        if k not in known:
            raise ConfigError(f"{path}.{k}", "unknown key")
        if k == "v":
            if not isinstance(v, list) or len(v) != 4:
                raise ConfigError(f"{path}.v", "must be a list of 4 numbers")
            for i, x in enumerate(v):
                _check_type(f"{path}.v[{i}]", x, float)
        elif k in ("lambda_pop", "tournament_size"):
            _check_type(f"{path}.{k}", v, int)
        elif k == "uncapped_step":
            _check_type(f"{path}.{k}", v, bool)
        else:
            _check_type(f"{path}.{k}", v, float)
    try:
        return HyperParams(**d)
    except ValueError as e:
        raise ConfigError(path, str(e)) from None


def config_from_dict(d: dict, base_dir: Optional[Path] = None) -> SimulationConfig:
    if not isinstance(d, dict):
        raise ConfigError("", "config must be a JSON object")
    for k in REQUIRED:
        if k not in d:
            raise ConfigError(k, "missing required field")
    kwargs = {}
    for k, v in d.items():
        if k == "hyper":
            kwargs["hyper"] = hyper_from_dict(v)
            continue
        if k not in _TYPES:
            raise ConfigError(k, "unknown key")
        _check_type(k, v, _TYPES[k])
        kwargs[k] = v
    if "ablation" in kwargs:
        for i, a in enumerate(kwargs["ablation"]):
            try:
                Ablation(a)
            except ValueError:
                raise ConfigError(f"ablation[{i}]", f"unknown ablation {a!r}") from None
    if base_dir is not None:
        for k in ("item_bank_ref", "dataset_ref", "perceptron_weights"):
            if kwargs.get(k) and not Path(kwargs[k]).is_absolute():
                kwargs[k] = str((base_dir / kwargs[k]).resolve())
    return SimulationConfig(**kwargs)


def load_config(path) -> SimulationConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError("", f"{path} is not valid JSON: {e}") from None
    return config_from_dict(doc, base_dir=path.parent)
