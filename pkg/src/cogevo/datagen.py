"""Synthetic item banks and ground-truth cohorts, plus JSONL (de)serialization.

Ground truth follows the power law of practice per (student, knowledge
point): the error indicator at the n-th opportunity is Bernoulli(A n^-a + e).
A student's knowledge point for an item is the item's top-weight concept.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .core import INTERACTION_KINDS, InteractionKind, Item, Option, Persona
from .icap import DEFAULT_GAINS, ICAP_CODES
from .seeding import rng_for

BANK_SCHEMA = 1
TRUTH_SCHEMA = "cogevo-truth/1"
SUPPORTED_TRUTH_SCHEMAS = (TRUTH_SCHEMA,)

MISCONCEPTION_KINDS = (
    "sign-error",
    "formula-misapplication",
    "overgeneralization",
    "procedural-slip",
)

TOPICS = (
    ("linear equations", "solve for x isolate the variable"),
    ("fractions", "common denominator numerator simplify"),
    ("integer operations", "negative numbers add subtract"),
    ("ratios and rates", "proportion unit rate compare"),
    ("percentages", "percent increase decrease discount"),
    ("exponents", "powers base exponent rules"),
    ("square roots", "radical perfect square estimate"),
    ("pythagorean theorem", "right triangle hypotenuse legs"),
    ("linear functions", "slope intercept graph line"),
    ("systems of equations", "substitution elimination pair"),
    ("inequalities", "number line greater less flip"),
    ("angles", "parallel lines transversal supplementary"),
    ("area and volume", "cylinder prism surface measure"),
    ("transformations", "reflection rotation translation dilation"),
    ("statistics", "mean median scatter data"),
    ("scientific notation", "powers of ten magnitude"),
)

REFLECTION_VOCAB = {
    "A": "checked copied steps looked answer again quickly noted the rule".split(),
    "C": (
        "because so i think this means the rule works when we first then which explains "
        "why my answer changed since step relates to idea connect reason"
    ).split(),
    "I": (
        "we discussed partner asked me explained back argued together agreed "
        "disagreed compared our methods then built on her idea his question debate"
    ).split(),
}
KIND_FOR_LABEL = {
    "P": InteractionKind.READING,
    "A": InteractionKind.QUESTIONING,
    "C": InteractionKind.SELF_EXPLANATION,
    "I": InteractionKind.ANSWERING,
}
REFLECTION_LENGTH = {"P": (0, 2), "A": (4, 9), "C": (14, 26), "I": (32, 48)}
LATENCY_MEDIAN_MS = {"P": 9000, "A": 14000, "C": 26000, "I": 34000}

REQUIRED_FIELDS = {
    "student": str,
    "t": int,
    "item": str,
    "chosen": int,
    "correct": bool,
    "reflection": str,
    "latency_ms": int,
}


class DataError(ValueError):
    """Malformed data file or record."""


class SchemaVersionError(DataError):
    pass


class RecordError(DataError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


# ---------------------------------------------------------------- item bank


@dataclass(frozen=True)
class ItemBank:
    concept_dim: int
    items: tuple[Item, ...]
    tag_concept: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        object.__setattr__(self, "_by_id", {it.id: it for it in self.items})
        for it in self.items:
            if it.concept_weights.size != self.concept_dim:
                raise DataError(f"item {it.id} has {it.concept_weights.size} concepts, bank has {self.concept_dim}")

    def __getitem__(self, item_id: str) -> Item:
        try:
            return self._by_id[item_id]
        except KeyError:
            raise DataError(f"unknown item {item_id!r}") from None

    def __contains__(self, item_id) -> bool:
        return item_id in self._by_id

    def __len__(self):
        return len(self.items)

    def by_top_concept(self, c: int) -> list[Item]:
        return [it for it in self.items if it.top_concept == c]

    def knowledge_points(self) -> dict[str, int]:
        return {it.id: it.top_concept for it in self.items}


def topic_name(c: int) -> str:
    return TOPICS[c % len(TOPICS)][0] if c < len(TOPICS) else f"concept {c}"


def misconception_tag(c: int, kind: str) -> str:
    return f"c{c:02d}:{kind}"


CONTEXT_WORDS = (
    "farmer market train ticket garden fence recipe flour bicycle trip pool water "
    "tank ladder wall shadow tree store price coupon school bus map scale model "
    "phone plan savings account loan bakery cake slices pizza team score game "
    "season rainfall temperature city population stadium seats concert tickets "
    "library books shelf paint room floor tiles aquarium fish marathon runner "
    "speed distance clock battery charge printer paper box volume kite string"
).split()


def _stem(rng, top: int, secondary: Sequence[int]) -> str:
    words = TOPICS[top % len(TOPICS)][1].split()
    context = " ".join(rng.choice(CONTEXT_WORDS, size=3, replace=False))
    return f"{rng.choice(words)} {context} {int(rng.integers(2, 99))}"


def gen_item_bank(n_items: int, concept_dim: int, seed: int) -> ItemBank:
    if n_items < 1:
        raise ValueError("n_items must be >= 1")
    if concept_dim < 1:
        raise ValueError("concept_dim must be >= 1")
    rng = rng_for("item-bank", seed, n_items, concept_dim)
    items = []
    tag_concept: dict[str, int] = {}
    for i in range(n_items):
        top = i % concept_dim
        others = [c for c in range(concept_dim) if c != top]
        n_sec = min(len(others), int(rng.integers(1, 3)))
        secondary = sorted(rng.choice(others, size=n_sec, replace=False).tolist()) if n_sec else []
        w = np.zeros(concept_dim)
        if secondary:
            w_top = rng.uniform(0.5, 0.8)
            split = rng.dirichlet(np.ones(len(secondary))) * (1 - w_top)
            w[secondary] = split
            w[top] = 1.0 - w[secondary].sum()
        else:
            w[top] = 1.0
        a = float(rng.uniform(0.8, 2.0))
        b = float(rng.standard_normal())
        while abs(b) > 3.0:
            b = float(rng.standard_normal())
        # distractors cycle over the item's concepts, top concept first
        cycle = [top] + secondary
        kinds = rng.choice(MISCONCEPTION_KINDS, size=3, replace=False)
        tags = [misconception_tag(cycle[j % len(cycle)], str(kinds[j])) for j in range(3)]
        for j, tag in enumerate(tags):
            tag_concept[tag] = cycle[j % len(cycle)]
        correct = int(rng.integers(0, 4))
        answer = int(rng.integers(-50, 100))
        options, di = [], 0
        for pos in range(4):
            if pos == correct:
                options.append(Option(str(answer)))
            else:
                options.append(Option(str(answer + int(rng.integers(1, 12)) * (1 if di % 2 else -1)), tags[di]))
                di += 1
        items.append(
            Item(f"q{i:04d}", _stem(rng, top, secondary), tuple(options), correct, a, b, w)
        )
    return ItemBank(concept_dim, tuple(items), tag_concept)


def item_to_dict(it: Item) -> dict:
    return {
        "id": it.id,
        "stem": it.stem_text,
        "options": [{"text": o.text, "misconception": o.misconception_tag} for o in it.options],
        "correct": it.correct_option,
        "a": it.irt_a,
        "b": it.irt_b,
        "concept_weights": {str(int(c)): float(it.concept_weights[c]) for c in it.concepts},
    }


def item_from_dict(d: dict, concept_dim: int) -> Item:
    w = np.zeros(concept_dim)
    for c, v in d["concept_weights"].items():
        w[int(c)] = float(v)
    opts = tuple(Option(o["text"], o.get("misconception")) for o in d["options"])
    return Item(d["id"], d["stem"], opts, int(d["correct"]), float(d["a"]), float(d["b"]), w)


def dump_item_bank(bank: ItemBank) -> str:
    doc = {
        "schema": BANK_SCHEMA,
        "concept_dim": bank.concept_dim,
        "items": [item_to_dict(it) for it in bank.items],
        "misconceptions": dict(sorted(bank.tag_concept.items())),
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def write_item_bank(bank: ItemBank, path) -> Path:
    path = Path(path)
    path.write_text(dump_item_bank(bank))
    return path


def load_item_bank(path) -> ItemBank:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: not valid JSON ({e})") from None
    if doc.get("schema") != BANK_SCHEMA:
        raise SchemaVersionError(f"{path}: unsupported item bank schema {doc.get('schema')!r}")
    d = int(doc["concept_dim"])
    try:
        items = tuple(item_from_dict(x, d) for x in doc["items"])
    except (KeyError, ValueError, TypeError) as e:
        raise DataError(f"{path}: bad item ({e})") from None
    tag_concept = {k: int(v) for k, v in doc.get("misconceptions", {}).items()}
    return ItemBank(d, items, tag_concept)


# -------------------------------------------------------------- ground truth


@dataclass(frozen=True)
class PowerLawParams:
    A_pl: float
    alpha_pl: float
    eps_pl: float

    def __post_init__(self):
        if not 0 <= self.A_pl <= 1:
            raise ValueError("A_pl must lie in [0, 1]")
        if not self.alpha_pl > 0:
            raise ValueError("alpha_pl must be > 0")
        if self.eps_pl < 0 or self.A_pl + self.eps_pl > 1 + 1e-12:
            raise ValueError("need eps_pl >= 0 and A_pl + eps_pl <= 1")

    def error_rate(self, n):
        return np.clip(self.A_pl * np.power(np.asarray(n, dtype=float), -self.alpha_pl) + self.eps_pl, 0.0, 1.0)


@dataclass(frozen=True)
class CohortSpec:
    n_students: int = 100
    n_opportunities: int = 100
    # fixed curve for every student; None samples per student (below)
    power_law: Optional[PowerLawParams] = None
    ability_sd: float = 0.8
    A_mid: float = 0.75
    A_ability_slope: float = 0.08
    A_range: tuple[float, float] = (0.5, 0.95)
    alpha_range: tuple[float, float] = (0.1, 0.8)
    eps_range: tuple[float, float] = (0.02, 0.08)
    # small concentration: most students lean on one engagement mode
    icap_concentration: tuple[float, float, float, float] = (0.3, 0.3, 0.3, 0.3)
    concepts_per_student: int = 1
    n_weak: int = 2
    weak_bias: float = 3.0
    # extra weight on distractors of the student's habitual misconception kind
    habit_bias: float = 24.0
    kind_noise: float = 0.1

    def __post_init__(self):
        if self.n_students < 1 or self.n_opportunities < 1:
            raise ValueError("n_students and n_opportunities must be >= 1")
        if self.concepts_per_student < 1:
            raise ValueError("concepts_per_student must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        return d


@dataclass(frozen=True)
class TruthRecord:
    student: str
    t: int
    item: str
    chosen: int
    correct: bool
    misconception: Optional[str]
    icap: str
    reflection: str
    latency_ms: int
    kind: Optional[str] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["kind"] is None:
            del d["kind"]
        return d


@dataclass
class Dataset:
    header: dict
    records: list[TruthRecord]

    def personas(self) -> dict[str, Persona]:
        return {
            s["id"]: Persona(s["id"], s["baseline_ability"], s["emotion_reactivity"], s.get("static_traits", {}))
            for s in self.header.get("students", [])
        }

    def by_student(self) -> dict[str, list[TruthRecord]]:
        out: dict[str, list[TruthRecord]] = {}
        for r in self.records:
            out.setdefault(r.student, []).append(r)
        for rs in out.values():
            rs.sort(key=lambda r: r.t)
        return out

    def __eq__(self, other):
        return isinstance(other, Dataset) and self.header == other.header and self.records == other.records


def _reflection(rng, label: str, topic: str) -> str:
    lo, hi = REFLECTION_LENGTH[label]
    n = int(rng.integers(lo, hi + 1))
    if label == "P" or n == 0:
        return " ".join(["ok", "read"][:n])
    words = list(rng.choice(REFLECTION_VOCAB[label], size=n))
    words.insert(int(rng.integers(0, len(words) + 1)), topic.split()[0])
    return " ".join(words)


def engagement_index(pi: np.ndarray, gains=DEFAULT_GAINS) -> float:
    """Expected ICAP gain rescaled to [0, 1]."""
    g = np.asarray(gains)
    return float((pi @ g - g.min()) / (g.max() - g.min()))


def _student_params(spec: CohortSpec, rng, theta0: float, eng: float) -> PowerLawParams:
    if spec.power_law is not None:
        return spec.power_law
    A = float(np.clip(spec.A_mid - spec.A_ability_slope * theta0 + rng.normal(0, 0.04), *spec.A_range))
    alpha = spec.alpha_range[0] + (spec.alpha_range[1] - spec.alpha_range[0]) * eng
    eps = float(rng.uniform(*spec.eps_range))
    return PowerLawParams(A, alpha, min(eps, 1.0 - A))


def _tag_weight(tag, tag_concept, weak, habit, spec: CohortSpec) -> float:
    w = spec.weak_bias if tag_concept.get(tag) in weak else 1.0
    if tag and tag.split(":", 1)[-1] == habit:
        w *= spec.habit_bias
    return w


def gen_ground_truth(spec: CohortSpec, bank: ItemBank, seed: int) -> Dataset:
    kp_pool = sorted({it.top_concept for it in bank.items})
    students, records = [], []
    width = len(str(spec.n_students - 1))
    for s in range(spec.n_students):
        sid = f"s{s:0{width}d}"
        rng = rng_for("truth", seed, sid)
        theta0 = float(np.clip(rng.normal(0.0, spec.ability_sd), -2.5, 2.5))
        pi = rng.dirichlet(spec.icap_concentration)
        params = _student_params(spec, rng, theta0, engagement_index(pi))
        n_focus = min(spec.concepts_per_student, len(kp_pool))
        focus = sorted(rng.choice(kp_pool, size=n_focus, replace=False).tolist())
        pool = [it for c in focus for it in bank.by_top_concept(c)]
        # weak concepts are drawn in proportion to how often they tag a distractor
        # in the student's practice pool, so the focus concept is the usual pick
        freq: dict[int, int] = {}
        for it in pool:
            for o in it.options:
                c = bank.tag_concept.get(o.misconception_tag)
                if c is not None:
                    freq[c] = freq.get(c, 0) + 1
        linked = sorted(freq)
        n_weak = min(spec.n_weak, len(linked))
        if n_weak:
            p = np.array([freq[c] for c in linked], dtype=float)
            weak = sorted(rng.choice(linked, size=n_weak, replace=False, p=p / p.sum()).tolist())
        else:
            weak = []
        habit = str(rng.choice(MISCONCEPTION_KINDS))
        students.append({
            "id": sid,
            "baseline_ability": theta0,
            "emotion_reactivity": float(rng.uniform(0.5, 1.5)),
            "static_traits": {
                "focus_concepts": ",".join(map(str, focus)),
                "weak_concepts": ",".join(map(str, weak)),
                "habit": habit,
            },
        })
        opportunity: dict[int, int] = {}
        prev = None
        for t in range(spec.n_opportunities):
            choices = [it for it in pool if it is not prev] or pool
            item = choices[int(rng.integers(0, len(choices)))]
            prev = item
            kp = item.top_concept
            n = opportunity[kp] = opportunity.get(kp, 0) + 1
            err = bool(rng.random() < float(params.error_rate(n)))
            label = ICAP_CODES[int(rng.choice(4, p=pi))]
            kind = KIND_FOR_LABEL[label]
            if rng.random() < spec.kind_noise:
                kind = INTERACTION_KINDS[int(rng.integers(0, 4))]
            reflection = _reflection(rng, label, topic_name(kp))
            latency = int(round(LATENCY_MEDIAN_MS[label] * math.exp(rng.normal(0, 0.4))))
            if err:
                distractors = [i for i in range(len(item.options)) if i != item.correct_option]
                w = np.array([
                    _tag_weight(item.options[i].misconception_tag, bank.tag_concept, weak, habit, spec)
                    for i in distractors
                ])
                chosen = distractors[int(rng.choice(len(distractors), p=w / w.sum()))]
                tag = item.options[chosen].misconception_tag
            else:
                chosen, tag = item.correct_option, None
            records.append(TruthRecord(sid, t, item.id, chosen, not err, tag, label, reflection, latency, kind.value))
    header = {
        "schema": TRUTH_SCHEMA,
        "seed": int(seed),
        "concept_dim": bank.concept_dim,
        "cohort": _jsonable(spec.to_dict()),
        "students": students,
    }
    return Dataset(header, records)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


# ---------------------------------------------------------------- JSONL i/o


def dumps_dataset(ds: Dataset) -> Iterator[str]:
    yield json.dumps(ds.header, sort_keys=True)
    for r in ds.records:
        yield json.dumps(r.to_dict(), sort_keys=True)


def write_dataset(ds: Dataset, path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for line in dumps_dataset(ds):
            fh.write(line + "\n")
    return path


def parse_record(obj, line: int) -> TruthRecord:
    if not isinstance(obj, dict):
        raise RecordError(line, "record is not a JSON object")
    # "response" is the reader-facing name for the chosen/correct pair
    for name in ("chosen", "correct"):
        if name not in obj:
            raise RecordError(line, f"missing response field {name!r}")
    for name, typ in REQUIRED_FIELDS.items():
        if name not in obj:
            raise RecordError(line, f"missing required field {name!r}")
        val = obj[name]
        if typ is int and (isinstance(val, bool) or not isinstance(val, int)):
            raise RecordError(line, f"field {name!r} must be an integer")
        if typ is not int and not isinstance(val, typ):
            raise RecordError(line, f"field {name!r} must be {typ.__name__}")
    if obj.get("icap") not in ICAP_CODES:
        raise RecordError(line, f"field 'icap' must be one of {ICAP_CODES}")
    mis = obj.get("misconception")
    if mis is not None and not isinstance(mis, str):
        raise RecordError(line, "field 'misconception' must be a string or null")
    if obj["correct"] and mis is not None:
        raise RecordError(line, "correct response carries a misconception")
    if obj["latency_ms"] < 0:
        raise RecordError(line, "latency_ms must be >= 0")
    kind = obj.get("kind")
    if kind is not None and kind not in {k.value for k in INTERACTION_KINDS}:
        raise RecordError(line, f"unknown interaction kind {kind!r}")
    return TruthRecord(
        obj["student"], obj["t"], obj["item"], obj["chosen"], obj["correct"], mis,
        obj["icap"], obj["reflection"], obj["latency_ms"], kind,
    )


def ingest_log(path, strict: bool = True) -> Dataset:
    """Read a dataset JSONL file.

    Strict mode raises on the first malformed line; lenient mode skips it and
    records ``(line, message)`` in ``header["_skipped"]``.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    skipped: list[tuple[int, str]] = []
    records: list[TruthRecord] = []
    with path.open(encoding="utf-8") as fh:
        first = fh.readline()
        if not first.strip():
            raise SchemaVersionError(f"{path}: missing schema header line")
        try:
            header = json.loads(first)
        except json.JSONDecodeError:
            raise SchemaVersionError(f"{path}: header line is not JSON") from None
        if not isinstance(header, dict) or header.get("schema") not in SUPPORTED_TRUTH_SCHEMAS:
            raise SchemaVersionError(f"{path}: unknown schema version {header.get('schema') if isinstance(header, dict) else None!r}")
        for lineno, raw in enumerate(fh, start=2):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as e:
                err = RecordError(lineno, f"invalid JSON ({e.msg})")
                if strict:
                    raise err from None
                skipped.append((lineno, str(err)))
                continue
            try:
                records.append(parse_record(obj, lineno))
            except RecordError as err:
                if strict:
                    raise
                skipped.append((lineno, str(err)))
    if skipped:
        header["_skipped"] = skipped
    return Dataset(header, records)


def iter_records(ds: Dataset, students: Optional[Iterable[str]] = None) -> Iterator[TruthRecord]:
    keep = None if students is None else set(students)
    for r in ds.records:
        if keep is None or r.student in keep:
            yield r
