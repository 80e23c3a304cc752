"""Per-step loop, student and cohort runs, and the interaction log format."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .config import Ablation, SimulationConfig
from .core import (
    AgentState,
    CognitiveLabel,
    CognitiveState,
    InteractionInput,
    InteractionKind,
    KnowledgeStructure,
    Persona,
    softplus,
)
from .datagen import Dataset, ItemBank, TruthRecord, load_item_bank, ingest_log
from .decision import (
    MistakeProfile,
    Response,
    alignment,
    decide,
    mastery_confidence,
    tag_concepts_from_item,
)
from .evolution import (
    GaussianGenerator,
    RemoteGenerator,
    ZpdRegion,
    consistency,
    evolve,
    fitness,
    generate_hypotheses,
    select,
)
from .icap import (
    IcapDistribution,
    PerceptronWeights,
    encode_features,
    evolution_rate,
    icap_distribution,
    load_weights,
)
from .retrieval import (
    Assimilation,
    Conflict,
    HashedBagEmbedder,
    MemoryBank,
    MemoryRecord,
    RemoteEmbedder,
    conflict_state,
    retrieve,
    store,
)
from .seeding import derive_seed

LOG_SCHEMA = "cogevo-log/1"
# a persona's weak concepts start this far below the rest
WEAK_GAP = 0.1
# prior mastery of the practised material sits above general ability
PRIOR_LIFT = 0.2
FLOW_CONSISTENCY = 0.8
FLOW_RETRIEVAL = 0.9
AROUSAL_DECAY = 0.5
NO_ICAP_OMEGA = softplus(1.0)


@dataclass(frozen=True)
class InteractionStep:
    t: int
    item_id: str
    icap: tuple[float, float, float, float]
    omega_L: float
    retrieval: dict
    winner_origin: Optional[int]
    p_hat: float
    response: Response
    delta_align: float
    flagged: bool
    state_label: str
    knowledge_snapshot: Optional[tuple[float, ...]] = None

    def to_dict(self, student: str) -> dict:
        r = self.response
        return {
            "student": student,
            "t": self.t,
            "item": self.item_id,
            "icap": list(self.icap),
            "omega_L": self.omega_L,
            "retrieval": self.retrieval,
            "winner_origin": self.winner_origin,
            "p_hat": self.p_hat,
            "chosen": r.chosen_option,
            "correct": r.is_correct,
            "misconception": r.misconception_tag,
            "elaboration": r.elaboration,
            "delta_align": self.delta_align,
            "flagged": self.flagged,
            "state": self.state_label,
            "knowledge": None if self.knowledge_snapshot is None else list(self.knowledge_snapshot),
        }


@dataclass
class Runtime:
    """Per-process helpers resolved from a config (weights, embedder, generator)."""

    weights: PerceptronWeights
    gains: tuple
    embedder: object
    generator: object
    tag_concept: Mapping[str, int]

    @classmethod
    def from_config(cls, cfg: SimulationConfig, bank: Optional[ItemBank] = None) -> Runtime:
        if cfg.perceptron_weights:
            weights, gains = load_weights(cfg.perceptron_weights)
        else:
            weights, gains = PerceptronWeights.default(), cfg.hyper.v
        embedder = RemoteEmbedder(cfg.embedder_url) if cfg.embedder_url else HashedBagEmbedder()
        generator = RemoteGenerator(cfg.generator_url) if cfg.generator_kind == "remote" else GaussianGenerator()
        return cls(weights, tuple(gains), embedder, generator, dict(bank.tag_concept) if bank else {})


def _traits_list(persona: Persona, key: str) -> list[int]:
    raw = persona.static_traits.get(key, "")
    return [int(x) for x in raw.split(",") if x.strip()]


def initial_agent(persona: Persona, concept_dim: int) -> AgentState:
    """Prior knowledge from the persona: ability sets the level, weak concepts sit lower."""
    base = (persona.baseline_ability + 3.0) / 6.0 + PRIOR_LIFT
    m = np.full(concept_dim, base)
    for c in _traits_list(persona, "weak_concepts"):
        if 0 <= c < concept_dim:
            m[c] -= WEAK_GAP
    return AgentState(
        persona,
        CognitiveState(CognitiveLabel.STABLE, 0.5, 0.0),
        KnowledgeStructure(np.clip(m, 0.0, 1.0)),
    )


def mistake_profile(bank: MemoryBank, tag_concept: Mapping[str, int]) -> MistakeProfile:
    """Tally past errors held in memory.

    Replayed records contribute the student's observed misconception; others
    the agent's own past error.
    """
    prof = MistakeProfile()
    for rec in bank.records:
        inp = rec.input
        if inp.observed_correct is not None:
            tag = None if inp.observed_correct else inp.observed_misconception
        else:
            tag = rec.response.misconception_tag
        if tag:
            prof.add(tag, tag_concept.get(tag))
    return prof


def step(
    agent: AgentState,
    bank: MemoryBank,
    inp: InteractionInput,
    cfg: SimulationConfig,
    step_seed: int,
    t: int,
    runtime: Optional[Runtime] = None,
) -> tuple[AgentState, MemoryBank, InteractionStep]:
    rt = runtime or Runtime.from_config(cfg)
    hp = cfg.hyper
    ab = cfg.ablation

    if Ablation.NO_ICAP in ab:
        icap = IcapDistribution.uniform()
        omega = NO_ICAP_OMEGA
    else:
        icap = icap_distribution(encode_features(inp), rt.weights)
        omega = evolution_rate(icap, rt.gains)

    if Ablation.NO_META_RET in ab:
        outcome = Conflict(conflict_state(omega, 0.0), 0.0)
    else:
        outcome = retrieve(bank, inp, agent.theta, omega, hp, rt.embedder)

    k = agent.knowledge
    winner_origin = None
    if isinstance(outcome, Assimilation):
        label = CognitiveLabel.FLOW if outcome.score > FLOW_RETRIEVAL else CognitiveLabel.STABLE
        state = CognitiveState(label, min(1.0, outcome.score), agent.cognitive.arousal * AROUSAL_DECAY)
        retrieval = {"kind": "assimilation", "score": outcome.score, "memory_t": outcome.best.timestamp}
    else:
        state = outcome.new_state
        retrieval = {"kind": "conflict", "score": outcome.max_score, "label": state.label.value}
        if Ablation.NO_EVO_UPDATE not in ab:
            zpd = ZpdRegion.from_hyper(hp)
            pop = generate_hypotheses(k, inp, state, hp, derive_seed(step_seed, "mutate"), rt.generator)
            fits = [fitness(h, inp, k, hp, zpd) for h in pop]
            winner = select(pop, fits, hp, derive_seed(step_seed, "select"))
            winner_origin = winner.origin_index
            k = evolve(k, winner, omega, hp)
            cons = consistency(winner, inp)
            label = CognitiveLabel.FLOW if cons > FLOW_CONSISTENCY else CognitiveLabel.EXPLORING
            state = CognitiveState(label, cons, state.arousal * AROUSAL_DECAY)

    p_hat = mastery_confidence(k, inp.item, state)
    tag_concept = rt.tag_concept or tag_concepts_from_item(inp.item)
    recalled = None if Ablation.NO_META_RET in ab else mistake_profile(bank, tag_concept)
    response = decide(k, inp.item, p_hat, derive_seed(step_seed, "decide"), tag_concept, recalled)
    report = alignment(response, p_hat, state, hp)

    next_agent = AgentState(agent.persona, state, k)
    next_bank = store(bank, MemoryRecord(inp, response, state, icap, t))
    snap = None
    if cfg.snapshot_every and t % cfg.snapshot_every == 0:
        snap = tuple(float(x) for x in k.mastery)
    rec = InteractionStep(
        t, inp.item.id, tuple(float(x) for x in icap.probs), omega, retrieval, winner_origin,
        p_hat, response, report.delta_align, report.flagged_low_confidence, state.label.value, snap,
    )
    return next_agent, next_bank, rec


def input_from_record(r: TruthRecord, bank: ItemBank, replay_outcomes: bool = True) -> InteractionInput:
    kind = InteractionKind(r.kind) if r.kind else InteractionKind.ANSWERING
    if not replay_outcomes:
        return InteractionInput(bank[r.item], kind, r.latency_ms, r.reflection)
    return InteractionInput(bank[r.item], kind, r.latency_ms, r.reflection, r.correct, r.misconception)


def run_student(
    cfg: SimulationConfig,
    persona: Persona,
    inputs: Sequence[InteractionInput],
    seed: Optional[int] = None,
    runtime: Optional[Runtime] = None,
    ts: Optional[Sequence[int]] = None,
) -> list[InteractionStep]:
    """Fold ``step`` over one student's interaction sequence.

    Step seeds are derived from (seed, student id, t) so a student's log does
    not depend on which other students run or in what order.
    """
    if not inputs:
        raise ValueError("item sequence is empty")
    rt = runtime or Runtime.from_config(cfg)
    master = cfg.master_seed if seed is None else seed
    agent = initial_agent(persona, cfg.concept_dim)
    bank = MemoryBank(capacity=cfg.memory_capacity)
    ts = list(range(len(inputs))) if ts is None else list(ts)
    out = []
    for t, inp in zip(ts, inputs):
        agent, bank, rec = step(agent, bank, inp, cfg, derive_seed(master, persona.id, t), t, rt)
        out.append(rec)
    return out


@dataclass
class CohortResult:
    logs: dict[str, list[InteractionStep]] = field(default_factory=dict)

    def rows(self) -> list[dict]:
        return [s.to_dict(sid) for sid in sorted(self.logs) for s in self.logs[sid]]

    def __eq__(self, other):
        return isinstance(other, CohortResult) and self.rows() == other.rows()

    def p_hat(self) -> np.ndarray:
        return np.array([r["p_hat"] for r in self.rows()])


def _cohort_inputs(cfg: SimulationConfig, bank: ItemBank, ds: Dataset):
    personas = ds.personas()
    per_student = ds.by_student()
    ids = sorted(per_student)
    if cfg.n_students is not None:
        ids = ids[: cfg.n_students]
    work = []
    for sid in ids:
        recs = per_student[sid]
        if cfg.n_opportunities is not None:
            recs = recs[: cfg.n_opportunities]
        persona = personas.get(sid) or Persona(sid)
        work.append((sid, persona, recs))
    return work


def _run_one(args):
    cfg, bank, sid, persona, recs = args
    rt = Runtime.from_config(cfg, bank)
    inputs = [input_from_record(r, bank, cfg.replay_outcomes) for r in recs]
    return sid, run_student(cfg, persona, inputs, runtime=rt, ts=[r.t for r in recs])


def run_cohort(
    cfg: SimulationConfig,
    bank: Optional[ItemBank] = None,
    dataset: Optional[Dataset] = None,
    order: Optional[Sequence[str]] = None,
    jobs: Optional[int] = None,
) -> CohortResult:
    bank = bank or load_item_bank(cfg.item_bank_ref)
    dataset = dataset or ingest_log(cfg.dataset_ref)
    if bank.concept_dim != cfg.concept_dim:
        raise ValueError(f"item bank concept_dim {bank.concept_dim} != config concept_dim {cfg.concept_dim}")
    work = _cohort_inputs(cfg, bank, dataset)
    if order is not None:
        pos = {sid: i for i, sid in enumerate(order)}
        work.sort(key=lambda w: pos.get(w[0], len(pos)))
    args = [(cfg, bank, sid, persona, recs) for sid, persona, recs in work]
    jobs = cfg.jobs if jobs is None else jobs
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_one, args, chunksize=max(1, len(args) // (4 * jobs))))
    else:
        rt = None
        results = []
        for a in args:
            rt = rt or Runtime.from_config(cfg, bank)
            cfg_, bank_, sid, persona, recs = a
            inputs = [input_from_record(r, bank_, cfg_.replay_outcomes) for r in recs]
            results.append((sid, run_student(cfg_, persona, inputs, runtime=rt, ts=[r.t for r in recs])))
    # keyed merge: result is independent of execution order
    return CohortResult({sid: log for sid, log in sorted(results)})


# --------------------------------------------------------------- log files


def log_lines(cfg: SimulationConfig, result: CohortResult) -> Iterable[str]:
    # worker count is scheduling, not semantics: logs must not depend on it
    config = {k: v for k, v in cfg.to_dict().items() if k != "jobs"}
    yield json.dumps({"schema": LOG_SCHEMA, "config": config}, sort_keys=True)
    for row in result.rows():
        yield json.dumps(row, sort_keys=True)


def write_log(path, cfg: SimulationConfig, result: CohortResult) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for line in log_lines(cfg, result):
            fh.write(line + "\n")
    return path


def read_log(path) -> tuple[dict, list[dict]]:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("schema") != LOG_SCHEMA:
            raise ValueError(f"{path}: not an interaction log (schema {header.get('schema')!r})")
        rows = [json.loads(line) for line in fh if line.strip()]
    return header, rows


# ------------------------------------------------------- estimator facade


class CogEvolutionAgent(BaseEstimator):
    """scikit-learn style facade over the cohort replay.

    ``fit`` binds the item bank and personas (nothing is learned);
    ``predict_proba`` returns the agent's mastery confidence for every truth
    record, in record order; ``score`` is the AUC of those predictions.
    """

    def __init__(self, hyper=None, ablation=(), master_seed=0, generator_kind="gaussian",
                 replay_outcomes=True, snapshot_every=0):
        self.hyper = hyper
        self.ablation = ablation
        self.master_seed = master_seed
        self.generator_kind = generator_kind
        self.replay_outcomes = replay_outcomes
        self.snapshot_every = snapshot_every

    def _config(self, bank: ItemBank) -> SimulationConfig:
        kw = dict(
            concept_dim=bank.concept_dim, ablation=frozenset(self.ablation),
            master_seed=self.master_seed, generator_kind=self.generator_kind,
            replay_outcomes=self.replay_outcomes, snapshot_every=self.snapshot_every,
        )
        if self.hyper is not None:
            kw["hyper"] = self.hyper
        return SimulationConfig(**kw)

    def fit(self, X: Dataset, y=None, item_bank: Optional[ItemBank] = None):
        if item_bank is None:
            raise ValueError("fit needs the item bank the dataset refers to")
        missing = {r.item for r in X.records} - set(item_bank.knowledge_points())
        if missing:
            raise ValueError(f"dataset references {len(missing)} unknown items")
        self.item_bank_ = item_bank
        self.config_ = self._config(item_bank)
        return self

    def simulate(self, X: Dataset) -> CohortResult:
        if not hasattr(self, "config_"):
            raise RuntimeError("call fit before simulate")
        return run_cohort(self.config_, self.item_bank_, X)

    def predict_proba(self, X: Dataset) -> np.ndarray:
        result = self.simulate(X)
        by_key = {(r["student"], r["t"]): r["p_hat"] for r in result.rows()}
        p = np.array([by_key[(r.student, r.t)] for r in X.records])
        return np.column_stack([1 - p, p])

    def predict(self, X: Dataset) -> np.ndarray:
        result = self.simulate(X)
        by_key = {(r["student"], r["t"]): r["correct"] for r in result.rows()}
        return np.array([by_key[(r.student, r.t)] for r in X.records])

    def score(self, X: Dataset, y=None) -> float:
        from .evaluation import auc

        return auc(self.predict_proba(X)[:, 1], [r.correct for r in X.records])
