"""Guideline red-flag rules over the record.

Rules are data: a typed predicate (see predicates), dual-audience message
templates, and a dedup key. Evaluation is pure — the caller owns alert
persistence — and fires a rule only when no alert with the same
(rule_id, dedup key values) is already on file, so an unchanged record
never re-alerts while a new reading re-arms reading-keyed rules.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, replace
from importlib import resources
from typing import Any, Iterable

from . import emr_model, predicates
from .emr_model import MISSING, PatientRecord, canonical_value

SEVERITIES = ("urgent", "high", "routine")
ALERT_STATUSES = ("new", "acknowledged", "acted", "dismissed")

_PLACEHOLDER_RE = re.compile(r"\{([^{}]+)\}")


class RuleError(ValueError):
    pass


class RuleParseError(RuleError):
    pass


class AlreadyReviewed(RuleError):
    pass


@dataclass(frozen=True)
class Rule:
    rule_id: str
    name: str
    guideline_ref: str
    predicate_text: str
    predicate: Any
    severity: str
    clinician_template: dict[str, str]  # language -> template
    patient_template: dict[str, str]
    recommended_action: dict[str, str]
    dedup_key_paths: tuple[str, ...] = ()


@dataclass
class Alert:
    alert_id: str
    rule_id: str
    record_id: str
    record_version: int
    fired_at: str
    ga_at_firing: int | None
    dedup_key_values: list
    status: str = "new"
    review: dict | None = None

    def to_payload(self) -> dict:
        return {
            "alert_id": self.alert_id,
            "rule_id": self.rule_id,
            "record_id": self.record_id,
            "record_version": self.record_version,
            "fired_at": self.fired_at,
            "ga_at_firing": self.ga_at_firing,
            "dedup_key_values": self.dedup_key_values,
            "status": self.status,
            "review": self.review,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "Alert":
        return cls(**payload)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def load_rules(document: dict | str) -> list[Rule]:
    """Parse and type-check a rules document; bad predicates or templates
    that interpolate paths the predicate never reads are load errors."""
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise RuleParseError(f"not valid JSON: {exc}") from None
    rules = []
    seen_ids = set()
    for item in document.get("rules", []):
        rule_id = item["rule_id"]
        if rule_id in seen_ids:
            raise RuleParseError(f"duplicate rule_id {rule_id}")
        seen_ids.add(rule_id)
        try:
            node = predicates.parse(item["predicate"])
        except predicates.PredicateParseError as exc:
            raise RuleParseError(f"{rule_id}: {exc}") from None
        predicates.check(node)  # raises PredicateTypeError with path/expected/found
        if item["severity"] not in SEVERITIES:
            raise RuleParseError(f"{rule_id}: unknown severity {item['severity']!r}")
        rule = Rule(
            rule_id=rule_id,
            name=item["name"],
            guideline_ref=item.get("guideline_ref", ""),
            predicate_text=item["predicate"],
            predicate=node,
            severity=item["severity"],
            clinician_template=dict(item["clinician_template"]),
            patient_template=dict(item["patient_template"]),
            recommended_action=dict(item.get("recommended_action", {})),
            dedup_key_paths=tuple(item.get("dedup_key_paths", [])),
        )
        _check_templates(rule)
        for key_path in rule.dedup_key_paths:
            predicates.term_type(predicates.parse_term(key_path))
        rules.append(rule)
    return rules


def _check_templates(rule: Rule) -> None:
    # Templates may read what the rule itself reads: predicate paths,
    # dedup-key paths, and the gestational age.
    allowed = predicates.referenced_paths(rule.predicate) | {"ga_weeks()"}
    for key_path in rule.dedup_key_paths:
        term = predicates.parse_term(key_path)
        if hasattr(term, "path"):
            allowed.add(term.path)
    for templates in (rule.clinician_template, rule.patient_template):
        for lang, template in templates.items():
            for placeholder in _PLACEHOLDER_RE.findall(template):
                term = predicates.parse_term(placeholder)
                if isinstance(term, predicates.GaWeeksTerm):
                    continue
                path = getattr(term, "path", None)
                if path not in allowed:
                    raise RuleParseError(
                        f"{rule.rule_id}: template ({lang}) interpolates {placeholder!r}, "
                        "which the predicate never references"
                    )


def default_rules() -> list[Rule]:
    text = resources.files("ancassist.data").joinpath("rules/anc_v1.json").read_text("utf-8")
    return load_rules(text)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _dedup_values(rule: Rule, ctx: predicates.EvalContext) -> list:
    values = []
    for key_path in rule.dedup_key_paths:
        value = predicates.eval_term(predicates.parse_term(key_path), ctx)
        values.append(None if value is MISSING else value)
    return values


def _alert_id(record_id: str, rule_id: str, dedup_values: list) -> str:
    digest = hashlib.sha256(
        f"{record_id}|{rule_id}|{canonical_value(dedup_values)}".encode()
    ).hexdigest()[:10]
    return f"a-{rule_id}-{digest}"


def evaluate(
    record: PatientRecord,
    rules: list[Rule],
    as_of: str,
    existing: Iterable[Alert | dict] = (),
) -> list[Alert]:
    """Fire every rule whose predicate holds and whose dedup key is unseen.

    Any alert already on file for (rule_id, dedup values) blocks refiring,
    whatever its status; changing a dedup key value re-arms the rule.
    """
    ctx = predicates.record_context(record, as_of)
    seen = set()
    for alert in existing:
        if isinstance(alert, Alert):
            seen.add((alert.rule_id, canonical_value(alert.dedup_key_values)))
        else:
            seen.add((alert["rule_id"], canonical_value(alert["dedup_key_values"])))
    fired: list[Alert] = []
    for rule in rules:
        if not predicates.evaluate(rule.predicate, ctx):
            continue
        dedup_values = _dedup_values(rule, ctx)
        key = (rule.rule_id, canonical_value(dedup_values))
        if key in seen:
            continue
        seen.add(key)
        fired.append(
            Alert(
                alert_id=_alert_id(record.record_id, rule.rule_id, dedup_values),
                rule_id=rule.rule_id,
                record_id=record.record_id,
                record_version=record.version,
                fired_at=as_of,
                ga_at_firing=ctx.ga_weeks,
                dedup_key_values=dedup_values,
            )
        )
    return fired


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def render(
    alert: Alert,
    rule: Rule,
    record: PatientRecord,
    audience: str,
    language: str = "en",
) -> str:
    """Interpolate actual record values; a missing value renders as an
    explicit "unknown" marker, never drops the alert."""
    if audience not in ("clinician", "patient"):
        raise RuleError(f"unknown audience {audience!r}")
    templates = rule.patient_template if audience == "patient" else rule.clinician_template
    template = templates.get(language) or templates.get("en") or next(iter(templates.values()))
    ctx = predicates.EvalContext(
        resolve=lambda path: emr_model.get_path(record, path), ga_weeks=alert.ga_at_firing
    )

    def substitute(match: re.Match) -> str:
        term = predicates.parse_term(match.group(1))
        value = predicates.eval_term(term, ctx)
        if value is MISSING or value is None:
            return "unknown"
        return str(value)

    text = _PLACEHOLDER_RE.sub(substitute, template)
    if audience == "patient":
        action = rule.recommended_action.get(language) or rule.recommended_action.get("en")
        if action:
            text = f"{text} {action}"
    return text


def review(alert: Alert, accurate: bool, relevant: bool, reviewer: str, timestamp: str) -> Alert:
    """Record the one-time binary accurate/relevant consultant review."""
    if alert.review is not None:
        raise AlreadyReviewed(alert.alert_id)
    return replace(
        alert,
        review={
            "accurate": bool(accurate),
            "relevant": bool(relevant),
            "reviewer": reviewer,
            "timestamp": timestamp,
        },
    )
