"""Data-driven cascading interview engine.

A flow document lists question nodes (prompt templates per language,
expected answer type, optional trigger predicate over already-answered
fields). The engine picks the next eligible question by priority, paces
questions across encounters, proactively re-asks lie-prone questions,
probes conflicting answers with rephrasings up to a budget, and reconciles
repeated answers by strict majority with most-recent tie-break.

All state lives in the Session value; identical (flow, answer transcript)
pairs replay to identical state and field-write sequences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from fractions import Fraction
from importlib import resources
from typing import Any

from . import emr_model, predicates
from .emr_model import MISSING, REFUSED, UNKNOWN

EXPECTED_TYPES = ("integer", "date", "bp_pair", "yes_no", "choice", "free_text")
MODALITIES = ("text", "numeral", "voice")

DEFAULT_QUESTION_CAP = 12
DEFAULT_REPHRASE_BUDGET = 2


class FlowError(ValueError):
    def __init__(self, code: str, message: str | None = None):
        super().__init__(message or code)
        self.code = code


class TypeMismatch(FlowError):
    def __init__(self, expected: str, found: str):
        super().__init__("type_mismatch", f"expected {expected}, got {found}")


# ---------------------------------------------------------------------------
# Flow documents
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuestionNode:
    id: str
    target_path: str
    prompts: dict[str, str]  # language -> prompt text
    rephrasings: tuple[dict[str, str], ...] = ()
    modalities: tuple[str, ...] = ("text", "numeral", "voice")
    sensitive: bool = False
    trigger_text: str | None = None
    trigger: Any = None
    priority: int = 100
    expected_type: str = "free_text"
    choices: tuple[str, ...] | None = None
    consistency_probe: bool = False  # proactively re-ask once to estimate truth

    def prompt(self, phrasing_index: int, language: str) -> str:
        """Prompt text for the nth ask; indexes past the rephrasing list
        reuse the last rephrasing."""
        if phrasing_index <= 0 or not self.rephrasings:
            texts = self.prompts
        else:
            texts = self.rephrasings[min(phrasing_index, len(self.rephrasings)) - 1]
        return texts.get(language) or texts.get("ur") or next(iter(texts.values()))


@dataclass
class FlowDocument:
    flow_id: str
    version: int
    nodes: list[QuestionNode]
    question_cap: int = DEFAULT_QUESTION_CAP
    rephrase_budget: int = DEFAULT_REPHRASE_BUDGET
    framing_prefix: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.by_id = {n.id: n for n in self.nodes}
        self.by_path = {n.target_path: n for n in self.nodes}


def load_flow(document: dict | str) -> FlowDocument:
    """Validate and load a flow document.

    Rejects duplicate node ids, duplicate target paths, unregistered or
    read-only targets, cyclic trigger dependencies, sensitive nodes without
    the framing prefix, and probe-marked nodes without rephrasings.
    """
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise FlowError("parse_error", f"not valid JSON: {exc}") from None

    framing = dict(document.get("framing_prefix", {}))
    nodes: list[QuestionNode] = []
    seen_ids: set[str] = set()
    seen_paths: set[str] = set()
    for item in document.get("nodes", []):
        node_id = item["id"]
        if node_id in seen_ids:
            raise FlowError("parse_error", f"duplicate node id {node_id}")
        seen_ids.add(node_id)
        target = item["target_path"]
        spec = emr_model.path_spec(target)
        if spec is None:
            raise FlowError("unknown_target_path", f"{node_id} targets unregistered {target}")
        if not spec.writable:
            raise FlowError("unknown_target_path", f"{node_id} targets read-only {target}")
        if target in seen_paths:
            raise FlowError("parse_error", f"duplicate target path {target}")
        seen_paths.add(target)
        expected = item.get("expected_type", "free_text")
        if expected not in EXPECTED_TYPES:
            raise FlowError("parse_error", f"{node_id}: unknown expected_type {expected!r}")
        modalities = tuple(item.get("modalities", ["text", "numeral", "voice"]))
        if not set(modalities) <= set(MODALITIES):
            raise FlowError("parse_error", f"{node_id}: unknown modality in {modalities}")
        trigger_text = item.get("trigger")
        trigger = None
        if trigger_text:
            try:
                trigger = predicates.parse(trigger_text)
            except predicates.PredicateParseError as exc:
                raise FlowError("parse_error", f"{node_id}: {exc}") from None
            predicates.check(trigger)
        node = QuestionNode(
            id=node_id,
            target_path=target,
            prompts=dict(item["prompts"]),
            rephrasings=tuple(dict(r) for r in item.get("rephrasings", [])),
            modalities=modalities,
            sensitive=bool(item.get("sensitive", False)),
            trigger_text=trigger_text,
            trigger=trigger,
            priority=int(item.get("priority", 100)),
            expected_type=expected,
            choices=tuple(item["choices"]) if item.get("choices") else None,
            consistency_probe=bool(item.get("consistency_probe", False)),
        )
        if node.sensitive:
            for lang, text in node.prompts.items():
                prefix = framing.get(lang)
                if prefix and not text.startswith(prefix):
                    raise FlowError(
                        "parse_error",
                        f"{node_id}: sensitive prompt ({lang}) lacks framing prefix",
                    )
        if node.consistency_probe and not node.rephrasings:
            raise FlowError("parse_error", f"{node_id}: probe-marked node needs rephrasings")
        if node.expected_type == "choice" and not node.choices:
            raise FlowError("parse_error", f"{node_id}: choice node needs choices")
        nodes.append(node)

    flow = FlowDocument(
        flow_id=document.get("flow_id", "flow"),
        version=int(document.get("version", 1)),
        nodes=nodes,
        question_cap=int(document.get("question_cap", DEFAULT_QUESTION_CAP)),
        rephrase_budget=int(document.get("rephrase_budget", DEFAULT_REPHRASE_BUDGET)),
        framing_prefix=framing,
    )
    _check_acyclic(flow)
    return flow


def _check_acyclic(flow: FlowDocument) -> None:
    """Trigger references must form a DAG over writer nodes."""
    writers: dict[str, str] = {n.target_path: n.id for n in flow.nodes}
    edges: dict[str, list[str]] = {n.id: [] for n in flow.nodes}
    for node in flow.nodes:
        if node.trigger is None:
            continue
        deps = set(predicates.referenced_paths(node.trigger))
        if predicates.uses_ga(node.trigger):
            deps.add("current_pregnancy.lmp_date")
        for path in deps:
            writer = writers.get(path)
            if writer is not None and writer != node.id:
                edges[writer].append(node.id)

    state: dict[str, int] = {}  # 0 visiting, 1 done

    def visit(nid: str, stack: list[str]) -> None:
        if state.get(nid) == 1:
            return
        if state.get(nid) == 0:
            cycle = stack[stack.index(nid):] + [nid]
            raise FlowError("cycle_detected", " -> ".join(cycle))
        state[nid] = 0
        stack.append(nid)
        for nxt in edges[nid]:
            visit(nxt, stack)
        stack.pop()
        state[nid] = 1

    for nid in edges:
        visit(nid, [])


def default_flow() -> FlowDocument:
    text = resources.files("ancassist.data").joinpath("flows/anc_v1.json").read_text("utf-8")
    return load_flow(text)


# ---------------------------------------------------------------------------
# Sessions
# ---------------------------------------------------------------------------


@dataclass
class AnswerObservation:
    target_path: str
    value: Any  # typed value | "unknown" | "refused"
    modality: str
    phrasing_index: int
    encounter_id: str
    timestamp: str
    method: str = "numeric"  # extraction method, drives provenance source
    raw_ref: str | None = None


@dataclass
class Session:
    session_id: str
    record_id: str
    flow_id: str
    observations: dict[str, list[AnswerObservation]] = field(default_factory=dict)
    pending_probes: list[dict] = field(default_factory=list)  # {node_id, phrasing_index}
    ask_counts: dict[str, int] = field(default_factory=dict)
    activated: set[str] = field(default_factory=set)  # triggers stay eligible once true
    encounter_index: int = 0
    questions_this_encounter: int = 0
    status: str = "active"  # active | awaiting_answer | complete
    awaiting_node_id: str | None = None
    awaiting_phrasing: int = 0
    paused: bool = False  # encounter cap hit; next inbound starts a new encounter

    def encounter_id(self) -> str:
        return f"e{self.encounter_index}"

    def start_new_encounter(self) -> None:
        self.encounter_index += 1
        self.questions_this_encounter = 0
        self.paused = False

    def to_dict(self) -> dict:
        out = asdict(self)
        out["activated"] = sorted(self.activated)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Session":
        data = dict(data)
        data["observations"] = {
            path: [AnswerObservation(**o) for o in obs]
            for path, obs in data.get("observations", {}).items()
        }
        data["activated"] = set(data.get("activated", []))
        return cls(**data)


@dataclass(frozen=True)
class Ask:
    node: QuestionNode
    phrasing_index: int


@dataclass(frozen=True)
class EncounterPause:
    pass


@dataclass(frozen=True)
class Complete:
    pass


@dataclass(frozen=True)
class ReconcileResult:
    value: Any
    consistency: Fraction
    needs_verification: bool


@dataclass(frozen=True)
class FieldWrite:
    """Intent emitted when a path reaches its reconciled value."""

    path: str
    value: Any
    needs_verification: bool
    consistency: Fraction
    method: str
    modality: str
    raw_ref: str | None


@dataclass
class AnswerResult:
    stored: bool
    clarify: bool = False  # re-ask the same node with a clarification
    probe_enqueued: bool = False
    writes: list[FieldWrite] = field(default_factory=list)


def reconcile(observations: list[AnswerObservation]) -> ReconcileResult:
    """Majority value with most-recent tie-break.

    unknown/refused observations never count toward the consistency
    denominator; a path answered only with unknowns reconciles to unknown
    with zero consistency.
    """
    if not observations:
        raise FlowError("parse_error", "reconcile needs at least one observation")
    informative = [o for o in observations if o.value not in (UNKNOWN, REFUSED)]
    if not informative:
        return ReconcileResult(observations[-1].value, Fraction(0), True)
    counts: dict[str, int] = {}
    for obs in informative:
        key = emr_model.canonical_value(obs.value)
        counts[key] = counts.get(key, 0) + 1
    total = len(informative)
    majority = [k for k, c in counts.items() if c * 2 > total]
    if majority:
        chosen_key = majority[0]
    else:
        chosen_key = emr_model.canonical_value(informative[-1].value)
    chosen = next(o.value for o in informative if emr_model.canonical_value(o.value) == chosen_key)
    consistency = Fraction(counts[chosen_key], total)
    return ReconcileResult(chosen, consistency, consistency < 1)


def _overlay_context(session: Session, record, as_of: str | None) -> predicates.EvalContext:
    """Triggers read the session's answers first, then the folded record."""

    def resolve(path: str):
        obs = session.observations.get(path)
        if obs:
            value = reconcile(obs).value
            return MISSING if value in (UNKNOWN, REFUSED) else value
        return emr_model.get_path(record, path)

    ga = None
    if as_of:
        lmp = resolve("current_pregnancy.lmp_date")
        if isinstance(lmp, str):
            from datetime import date as _date

            try:
                ga_value = emr_model.gestational_age(
                    _date.fromisoformat(lmp), _date.fromisoformat(as_of[:10])
                )
                ga = ga_value.weeks
            except (ValueError, emr_model.RecordError):
                ga = None
        if ga is None:
            ga = emr_model.ga_weeks_for_record(record, as_of)
    return predicates.EvalContext(resolve=resolve, ga_weeks=ga)


def next_question(
    session: Session,
    flow: FlowDocument,
    record,
    *,
    as_of: str | None = None,
) -> Ask | EncounterPause | Complete:
    """Pick the next eligible node (or a pending probe) by priority.

    Mutates the session: marks it awaiting the returned node and counts the
    ask. Returns EncounterPause at the per-encounter cap, Complete when no
    eligible node remains.
    """
    if session.status == "awaiting_answer":
        raise FlowError("parse_error", "session is awaiting an answer")
    if session.status == "complete":
        return Complete()

    ctx = _overlay_context(session, record, as_of)
    for node in flow.nodes:
        if node.id in session.activated:
            continue
        if node.trigger is None or predicates.evaluate(node.trigger, ctx):
            session.activated.add(node.id)

    ask: Ask | None = None
    if session.pending_probes:
        probe = session.pending_probes[0]
        node = flow.by_id[probe["node_id"]]
        ask = Ask(node, probe["phrasing_index"])
    else:
        candidates = [
            n
            for n in flow.nodes
            if n.id in session.activated
            and not session.observations.get(n.target_path)
            and session.ask_counts.get(n.id, 0) == 0
        ]
        if candidates:
            order = {n.id: i for i, n in enumerate(flow.nodes)}
            node = min(candidates, key=lambda n: (n.priority, order[n.id]))
            ask = Ask(node, 0)

    if ask is None:
        session.status = "complete"
        return Complete()
    if session.questions_this_encounter >= flow.question_cap:
        session.paused = True
        return EncounterPause()
    if session.pending_probes:
        session.pending_probes.pop(0)
    session.status = "awaiting_answer"
    session.awaiting_node_id = ask.node.id
    session.awaiting_phrasing = ask.phrasing_index
    session.questions_this_encounter += 1
    session.ask_counts[ask.node.id] = session.ask_counts.get(ask.node.id, 0) + 1
    return ask


def record_answer(
    session: Session,
    flow: FlowDocument,
    node: QuestionNode,
    extraction,
    *,
    timestamp: str,
    modality: str,
    raw_ref: str | None = None,
) -> AnswerResult:
    """Store one answer observation and drive the probe/settle logic.

    A failed extraction (fallback_unknown) first asks for clarification;
    once the ask budget is spent it is stored as an explicit unknown.
    Returns the field writes to persist when the path settles.
    """
    if session.status != "awaiting_answer" or session.awaiting_node_id != node.id:
        raise FlowError("parse_error", f"session is not awaiting node {node.id}")
    if extraction.target_type != node.expected_type:
        raise TypeMismatch(node.expected_type, extraction.target_type)

    budget_total = 1 + flow.rephrase_budget
    asked = session.ask_counts.get(node.id, 0)

    if extraction.failed and asked < budget_total:
        # observation not stored; gateway re-asks with a clarification
        session.ask_counts[node.id] = asked + 1
        session.questions_this_encounter += 1
        return AnswerResult(stored=False, clarify=True)

    value = UNKNOWN if extraction.failed else extraction.value
    observation = AnswerObservation(
        target_path=node.target_path,
        value=value,
        modality=modality,
        phrasing_index=session.awaiting_phrasing,
        encounter_id=session.encounter_id(),
        timestamp=timestamp,
        method=extraction.method,
        raw_ref=raw_ref,
    )
    observations = session.observations.setdefault(node.target_path, [])
    observations.append(observation)
    session.status = "active"
    session.awaiting_node_id = None
    session.awaiting_phrasing = 0

    informative = [o for o in observations if o.value not in (UNKNOWN, REFUSED)]
    distinct = {emr_model.canonical_value(o.value) for o in informative}
    conflict = len(distinct) > 1 and value not in (UNKNOWN, REFUSED)
    want_proactive = (
        node.consistency_probe and len(observations) == 1 and value not in (UNKNOWN, REFUSED)
    )
    probe = None
    if conflict and asked < budget_total and node.rephrasings:
        rephrase_count = sum(1 for o in observations if o.phrasing_index > 0)
        probe = {"node_id": node.id, "phrasing_index": rephrase_count + 1}
    elif want_proactive and asked < budget_total:
        probe = {"node_id": node.id, "phrasing_index": 0}
    if probe is not None:
        session.pending_probes.append(probe)
        return AnswerResult(stored=True, probe_enqueued=True)

    reconciled = reconcile(observations)
    write = FieldWrite(
        path=node.target_path,
        value=reconciled.value,
        needs_verification=reconciled.needs_verification,
        consistency=reconciled.consistency,
        method=observation.method,
        modality=observation.modality,
        raw_ref=observation.raw_ref,
    )
    return AnswerResult(stored=True, writes=[write])
