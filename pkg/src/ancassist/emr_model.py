"""Antenatal EMR data model.

Defines the structured patient record, the canonical field-path registry
shared by every module that reads or writes record fields, derived
obstetric dates (EDD, gestational age), record validation, and the
canonical byte-stable serialization used for export and golden tests.

Dates are stored inside records as ISO ``YYYY-MM-DD`` strings so that the
canonical serialization is trivially stable and date comparisons reduce to
string comparisons. The date-math operations below accept ``datetime.date``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from datetime import date, timedelta
from typing import Any

UNKNOWN = "unknown"
REFUSED = "refused"

TRI_STATES = ("yes", "no", "unknown")
EDUCATION_LEVELS = ("none", "primary", "matric", "intermediate", "degree", "unknown")
FAMILY_STATUSES = ("nuclear", "joint", "unknown")
CONCEPTION_MODES = ("natural", "ivf", "unknown")
LINEAGES = ("maternal", "paternal", "unknown")
LAB_STATUSES = ("not_done", "pending", "done")
FETAL_MOVEMENT_STATUSES = ("normal", "reduced", "none")
PREGNANCY_OUTCOMES = ("live_birth", "stillbirth", "neonatal_death", "unknown")
DELIVERY_MODES = ("normal", "c_section", "assisted", "unknown")
PROVENANCE_SOURCES = ("patient_reported", "extracted", "clinician_entered")

GESTATION_DAYS = 280  # Naegele's rule
TERM_WARNING_WEEKS = 44

# Physiologic plausibility bounds. These catch garbled extractions before
# any alert rule runs; they are deliberately wider than alert thresholds.
AGE_BOUNDS = (10, 60)
BP_SYSTOLIC_BOUNDS = (60, 260)
BP_DIASTOLIC_BOUNDS = (30, 160)


class RecordError(ValueError):
    """Domain precondition violation; ``code`` is a stable machine-readable tag."""

    def __init__(self, code: str, message: str | None = None):
        super().__init__(message or code)
        self.code = code


class UnknownPathError(RecordError):
    def __init__(self, path: str):
        super().__init__("unknown_target_path", f"unregistered field path: {path}")
        self.path = path


# ---------------------------------------------------------------------------
# Record types
# ---------------------------------------------------------------------------


@dataclass
class Demographics:
    name: str | None = None
    age: int | str | None = None  # int years, or "unknown"
    education_level: str | None = None
    family_status: str | None = None
    contact_ref: str | None = None


@dataclass
class ObstetricHistory:
    gravida: int | str | None = None
    para: int | str | None = None
    abortions: int | str | None = None
    # entry: {gestational_age_weeks: int|"unknown", dc_performed: yes|no|unknown}
    miscarriages: list[dict] = field(default_factory=list)
    # entry: {outcome, place_of_birth, child_age: int|"unknown", delivery_mode}
    previous_pregnancies: list[dict] = field(default_factory=list)


@dataclass
class CurrentPregnancy:
    lmp_date: str | None = None
    edd: str | None = None  # derived, set alongside lmp_date
    conception_mode: str | None = None
    preexisting: set[str] = field(default_factory=set)  # subset of {hypertension, diabetes}
    overweight: str | None = None  # tri-state
    # entry: {date, bp_systolic: int, bp_diastolic: int, weight_kg: number}; kept date-sorted
    vitals: list[dict] = field(default_factory=list)
    # test name -> {status: not_done|pending|done, result: str, date: str}
    labs: dict[str, dict] = field(default_factory=dict)
    # entry: {date, clinical_term, raw_ref}; kept date-sorted
    symptoms: list[dict] = field(default_factory=list)
    # entry: {date, status: normal|reduced|none}; kept date-sorted
    fetal_movement: list[dict] = field(default_factory=list)


@dataclass
class Psychosocial:
    smoking: str | None = None
    substance_use: str | None = None
    domestic_violence_disclosed: str | None = None
    wellbeing_notes: list[str] = field(default_factory=list)


@dataclass
class FieldProvenance:
    source: str  # patient_reported | extracted | clinician_entered
    verified: bool
    encounter_id: str
    site_id: str
    timestamp: str
    raw_utterance_ref: str | None = None


@dataclass
class PatientRecord:
    """The antenatal EMR, materialized as a fold over an append-only event log."""

    record_id: str
    demographics: Demographics = field(default_factory=Demographics)
    obstetric_history: ObstetricHistory = field(default_factory=ObstetricHistory)
    current_pregnancy: CurrentPregnancy = field(default_factory=CurrentPregnancy)
    # entry: {condition, lineage: maternal|paternal|unknown}
    family_history: list[dict] = field(default_factory=list)
    psychosocial: Psychosocial = field(default_factory=Psychosocial)
    provenance: dict[str, FieldProvenance] = field(default_factory=dict)
    version: int = 0  # count of events folded into this state


@dataclass
class Finding:
    path: str
    severity: str  # error | warning
    reason: str


@dataclass(frozen=True)
class GestationalAge:
    weeks: int
    days: int  # 0..6
    beyond_term: bool = False  # weeks > 44: dating is suspect

    def __str__(self) -> str:
        return f"{self.weeks}w{self.days}d"


# ---------------------------------------------------------------------------
# Canonical path registry
# ---------------------------------------------------------------------------
#
# Every field-path any module may write or reference appears here, in a flat
# dotted template form: "[]" stands for any list index, "*" for any lab test
# name. Provenance keys, event payloads and rule predicates all share this
# addressing scheme.

_MISSING = object()
# ``get_path`` sentinel for absent values; distinct from an explicit "unknown".
MISSING = _MISSING


@dataclass(frozen=True)
class PathSpec:
    template: str
    value_type: str  # "int" | "number" | "date" | "text" | "enum" | "list" | "entry"
    writable: bool = True
    enum_values: tuple[str, ...] | None = None


_SPECS = [
    PathSpec("demographics.name", "text"),
    PathSpec("demographics.age", "int"),
    PathSpec("demographics.education_level", "enum", enum_values=EDUCATION_LEVELS),
    PathSpec("demographics.family_status", "enum", enum_values=FAMILY_STATUSES),
    PathSpec("demographics.contact_ref", "text"),
    PathSpec("obstetric_history.gravida", "int"),
    PathSpec("obstetric_history.para", "int"),
    PathSpec("obstetric_history.abortions", "int"),
    PathSpec("obstetric_history.miscarriages[].gestational_age_weeks", "int"),
    PathSpec("obstetric_history.miscarriages[].dc_performed", "enum", enum_values=TRI_STATES),
    PathSpec("obstetric_history.previous_pregnancies[].outcome", "enum", enum_values=PREGNANCY_OUTCOMES),
    PathSpec("obstetric_history.previous_pregnancies[].place_of_birth", "text"),
    PathSpec("obstetric_history.previous_pregnancies[].child_age", "int"),
    PathSpec("obstetric_history.previous_pregnancies[].delivery_mode", "enum", enum_values=DELIVERY_MODES),
    PathSpec("current_pregnancy.lmp_date", "date"),
    PathSpec("current_pregnancy.edd", "date", writable=False),
    PathSpec("current_pregnancy.conception_mode", "enum", enum_values=CONCEPTION_MODES),
    PathSpec("current_pregnancy.preexisting.hypertension", "enum", enum_values=TRI_STATES),
    PathSpec("current_pregnancy.preexisting.diabetes", "enum", enum_values=TRI_STATES),
    PathSpec("current_pregnancy.overweight", "enum", enum_values=TRI_STATES),
    PathSpec("current_pregnancy.vitals", "list", writable=False),
    PathSpec("current_pregnancy.vitals[].date", "date"),
    PathSpec("current_pregnancy.vitals[].bp_systolic", "int"),
    PathSpec("current_pregnancy.vitals[].bp_diastolic", "int"),
    PathSpec("current_pregnancy.vitals[].weight_kg", "number"),
    # virtual write target for interview flows: one blood-pressure reading
    PathSpec("current_pregnancy.vitals[].bp", "bp_pair"),
    PathSpec("current_pregnancy.labs.*.status", "enum", enum_values=LAB_STATUSES),
    PathSpec("current_pregnancy.labs.*.result", "text"),
    PathSpec("current_pregnancy.labs.*.date", "date"),
    # virtual write target for interview flows: whole lab entry via yes/no
    PathSpec("current_pregnancy.labs.*", "entry"),
    PathSpec("current_pregnancy.symptoms", "list", writable=False),
    PathSpec("current_pregnancy.symptoms[]", "entry"),
    PathSpec("current_pregnancy.symptoms[].date", "date", writable=False),
    PathSpec("current_pregnancy.symptoms[].clinical_term", "text", writable=False),
    PathSpec("current_pregnancy.symptoms[].raw_ref", "text", writable=False),
    PathSpec("current_pregnancy.fetal_movement", "list", writable=False),
    PathSpec("current_pregnancy.fetal_movement[]", "entry"),
    PathSpec("current_pregnancy.fetal_movement[].date", "date", writable=False),
    PathSpec(
        "current_pregnancy.fetal_movement[].status", "enum", enum_values=FETAL_MOVEMENT_STATUSES
    ),
    PathSpec("family_history[].condition", "text"),
    PathSpec("family_history[].lineage", "enum", enum_values=LINEAGES),
    PathSpec("psychosocial.smoking", "enum", enum_values=TRI_STATES),
    PathSpec("psychosocial.substance_use", "enum", enum_values=TRI_STATES),
    PathSpec("psychosocial.domestic_violence_disclosed", "enum", enum_values=TRI_STATES),
    PathSpec("psychosocial.wellbeing_notes", "list", writable=False),
    PathSpec("psychosocial.wellbeing_notes[]", "text"),
]

PATH_REGISTRY: dict[str, PathSpec] = {s.template: s for s in _SPECS}


def path_template(path: str) -> str:
    """Collapse a concrete path to its registry template.

    Numeric indices become ``[]``; the lab-test name segment becomes ``*``.
    """
    parts = []
    for seg in path.split("."):
        if "[" in seg:
            name = seg[: seg.index("[")]
            parts.append(f"{name}[]")
        else:
            parts.append(seg)
    template = ".".join(parts)
    if template.startswith("current_pregnancy.labs.") and template != "current_pregnancy.labs":
        rest = template.split(".", 2)[2]
        bits = rest.split(".")
        bits[0] = "*"
        template = "current_pregnancy.labs." + ".".join(bits)
    return template


def path_spec(path: str) -> PathSpec | None:
    return PATH_REGISTRY.get(path_template(path))


def is_registered(path: str) -> bool:
    return path_spec(path) is not None


def _split_segment(seg: str) -> tuple[str, int | None, bool]:
    """Return (name, index, is_append) for a path segment."""
    if "[" not in seg:
        return seg, None, False
    name, bracket = seg.split("[", 1)
    inner = bracket.rstrip("]")
    if inner == "":
        return name, None, True
    return name, int(inner), False


def get_path(record: PatientRecord, path: str) -> Any:
    """Resolve a concrete dotted path against the record.

    Returns ``MISSING`` (module-level sentinel) when any step is absent.
    Membership paths under ``current_pregnancy.preexisting`` resolve to
    "yes"/"no" based on set membership, "no" only once the path was answered.
    """
    if path.startswith("current_pregnancy.preexisting."):
        condition = path.rsplit(".", 1)[1]
        if condition in record.current_pregnancy.preexisting:
            return "yes"
        if path in record.provenance:
            return "no"
        return MISSING

    node: Any = record
    for seg in path.split("."):
        name, index, is_append = _split_segment(seg)
        if is_append:
            return MISSING
        if isinstance(node, dict):
            node = node.get(name, _MISSING)
        else:
            node = getattr(node, name, _MISSING)
        if node is _MISSING or node is None:
            return MISSING
        if index is not None:
            if not isinstance(node, list) or index >= len(node):
                return MISSING
            node = node[index]
    return node


def set_path(record: PatientRecord, path: str, value: Any) -> str:
    """Write ``value`` at ``path``, creating list slots as needed.

    ``name[]`` appends. Returns the concrete path actually written (with
    the resolved index), which is the provenance key for the write.
    Raises UnknownPathError for paths outside the registry and RecordError
    for writes to read-only paths.
    """
    spec = path_spec(path)
    if spec is None:
        raise UnknownPathError(path)
    if not spec.writable:
        raise RecordError("read_only_path", f"path is not writable: {path}")

    if path.startswith("current_pregnancy.preexisting."):
        condition = path.rsplit(".", 1)[1]
        if value == "yes":
            record.current_pregnancy.preexisting.add(condition)
        elif value == "no":
            record.current_pregnancy.preexisting.discard(condition)
        return path

    segments = path.split(".")
    node: Any = record
    concrete: list[str] = []
    for i, seg in enumerate(segments):
        name, index, is_append = _split_segment(seg)
        last = i == len(segments) - 1

        if isinstance(node, dict):
            container_get = node.get
            container_set = node.__setitem__
        else:
            container_get = lambda k, d=None: getattr(node, k, d)  # noqa: E731
            container_set = lambda k, v: setattr(node, k, v)  # noqa: E731

        if index is None and not is_append:
            if last:
                container_set(name, value)
                concrete.append(seg)
            else:
                child = container_get(name)
                if child is None:
                    child = {}
                    container_set(name, child)
                concrete.append(seg)
                node = child
            continue

        lst = container_get(name)
        if lst is None:
            lst = []
            container_set(name, lst)
        if is_append:
            idx = len(lst)
            lst.append(value if last else {})
        else:
            idx = index
            while len(lst) <= idx:
                lst.append({})
            if last:
                lst[idx] = value
        concrete.append(f"{name}[{idx}]")
        if not last:
            node = lst[idx]
    return ".".join(concrete)


# ---------------------------------------------------------------------------
# Derived obstetric quantities
# ---------------------------------------------------------------------------


def compute_edd(lmp: date, *, today: date | None = None) -> date:
    """Expected due date: LMP + 280 days."""
    if today is not None and lmp > today:
        raise RecordError("future_lmp", f"LMP {lmp.isoformat()} is in the future")
    return lmp + timedelta(days=GESTATION_DAYS)


def gestational_age(lmp: date, as_of: date) -> GestationalAge:
    """Gestational age in completed weeks plus leftover days."""
    if as_of < lmp:
        raise RecordError("as_of_before_lmp", f"as_of {as_of} precedes LMP {lmp}")
    elapsed = (as_of - lmp).days
    weeks, days = divmod(elapsed, 7)
    return GestationalAge(weeks=weeks, days=days, beyond_term=weeks > TERM_WARNING_WEEKS)


def ga_weeks_for_record(record: PatientRecord, as_of: str) -> int | None:
    """Completed GA weeks from the record's LMP, or None without a usable LMP."""
    lmp = record.current_pregnancy.lmp_date
    if not lmp:
        return None
    try:
        ga = gestational_age(date.fromisoformat(lmp), date.fromisoformat(as_of[:10]))
    except (ValueError, RecordError):
        return None
    return ga.weeks


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _check_date(findings: list[Finding], path: str, value: Any) -> None:
    if value in (None, UNKNOWN):
        return
    try:
        date.fromisoformat(value)
    except (TypeError, ValueError):
        findings.append(Finding(path, "error", f"not an ISO date: {value!r}"))


def _check_tri(findings: list[Finding], path: str, value: Any) -> None:
    if value is not None and value not in TRI_STATES:
        findings.append(Finding(path, "error", f"not a yes/no/unknown value: {value!r}"))


def validate_record(record: PatientRecord) -> list[Finding]:
    """Check every schema invariant; pure and idempotent, never mutates."""
    findings: list[Finding] = []
    d = record.demographics
    if _is_int(d.age) and not (AGE_BOUNDS[0] <= d.age <= AGE_BOUNDS[1]):
        findings.append(Finding("demographics.age", "error", f"age {d.age} outside {AGE_BOUNDS}"))
    if d.education_level is not None and d.education_level not in EDUCATION_LEVELS:
        findings.append(
            Finding("demographics.education_level", "error", f"unknown level {d.education_level!r}")
        )
    if d.family_status is not None and d.family_status not in FAMILY_STATUSES:
        findings.append(
            Finding("demographics.family_status", "error", f"unknown status {d.family_status!r}")
        )

    o = record.obstetric_history
    if _is_int(o.gravida) and _is_int(o.para) and _is_int(o.abortions):
        if o.para + o.abortions > o.gravida:
            findings.append(
                Finding(
                    "obstetric_history",
                    "error",
                    f"para+abortions ({o.para}+{o.abortions}) exceeds gravida ({o.gravida})",
                )
            )
    for i, m in enumerate(o.miscarriages):
        _check_tri(findings, f"obstetric_history.miscarriages[{i}].dc_performed", m.get("dc_performed"))

    c = record.current_pregnancy
    if c.lmp_date is not None:
        _check_date(findings, "current_pregnancy.lmp_date", c.lmp_date)
        if _is_int(o.gravida) and o.gravida < 1:
            findings.append(
                Finding("obstetric_history.gravida", "error", "gravida < 1 with a current pregnancy")
            )
    if c.conception_mode is not None and c.conception_mode not in CONCEPTION_MODES:
        findings.append(
            Finding("current_pregnancy.conception_mode", "error", f"unknown mode {c.conception_mode!r}")
        )
    _check_tri(findings, "current_pregnancy.overweight", c.overweight)
    unknown_pre = c.preexisting - {"hypertension", "diabetes"}
    if unknown_pre:
        findings.append(
            Finding("current_pregnancy.preexisting", "error", f"unknown conditions {sorted(unknown_pre)}")
        )

    for i, v in enumerate(c.vitals):
        base = f"current_pregnancy.vitals[{i}]"
        _check_date(findings, f"{base}.date", v.get("date"))
        sys_, dia = v.get("bp_systolic"), v.get("bp_diastolic")
        if _is_int(sys_) and not (BP_SYSTOLIC_BOUNDS[0] <= sys_ <= BP_SYSTOLIC_BOUNDS[1]):
            findings.append(Finding(f"{base}.bp_systolic", "error", f"{sys_} outside {BP_SYSTOLIC_BOUNDS}"))
        if _is_int(dia) and not (BP_DIASTOLIC_BOUNDS[0] <= dia <= BP_DIASTOLIC_BOUNDS[1]):
            findings.append(Finding(f"{base}.bp_diastolic", "error", f"{dia} outside {BP_DIASTOLIC_BOUNDS}"))
        if _is_int(sys_) and _is_int(dia) and sys_ <= dia:
            findings.append(Finding(base, "error", f"systolic {sys_} not above diastolic {dia}"))
    _check_sorted(findings, "current_pregnancy.vitals", c.vitals)
    _check_sorted(findings, "current_pregnancy.symptoms", c.symptoms)
    _check_sorted(findings, "current_pregnancy.fetal_movement", c.fetal_movement)
    for name, lab in c.labs.items():
        status = lab.get("status")
        if status is not None and status not in LAB_STATUSES:
            findings.append(
                Finding(f"current_pregnancy.labs.{name}.status", "error", f"unknown status {status!r}")
            )
    for i, fm in enumerate(c.fetal_movement):
        status = fm.get("status")
        if status is not None and status not in FETAL_MOVEMENT_STATUSES:
            findings.append(
                Finding(f"current_pregnancy.fetal_movement[{i}].status", "error", f"unknown status {status!r}")
            )

    for i, fc in enumerate(record.family_history):
        if fc.get("lineage") not in LINEAGES:
            findings.append(
                Finding(f"family_history[{i}].lineage", "error", f"lineage must be one of {LINEAGES}")
            )

    p = record.psychosocial
    _check_tri(findings, "psychosocial.smoking", p.smoking)
    _check_tri(findings, "psychosocial.substance_use", p.substance_use)
    _check_tri(findings, "psychosocial.domestic_violence_disclosed", p.domestic_violence_disclosed)

    for path, prov in record.provenance.items():
        if prov.source not in PROVENANCE_SOURCES:
            findings.append(Finding(path, "error", f"unknown provenance source {prov.source!r}"))
    return findings


def _check_sorted(findings: list[Finding], path: str, entries: list[dict]) -> None:
    dates = [e.get("date") for e in entries if e.get("date")]
    if dates != sorted(dates):
        findings.append(Finding(path, "error", "entries not sorted by date"))


# ---------------------------------------------------------------------------
# Canonical serialization
# ---------------------------------------------------------------------------


def record_to_dict(record: PatientRecord) -> dict:
    out = asdict(record)
    out["current_pregnancy"]["preexisting"] = sorted(record.current_pregnancy.preexisting)
    return out


def canonical_json(record: PatientRecord) -> str:
    """One canonical byte form per record state: sorted keys, compact, ASCII."""
    return json.dumps(record_to_dict(record), sort_keys=True, ensure_ascii=True, separators=(",", ":")) + "\n"


def canonical_value(value: Any) -> str:
    """Canonical byte form for any JSON-serializable value (events, payloads)."""
    return json.dumps(value, sort_keys=True, ensure_ascii=True, separators=(",", ":"))
