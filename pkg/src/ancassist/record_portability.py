"""Patient-owned, event-sourced record core.

Records are grow-only sets of events; the materialized EMR is a fold over
the canonical order (lclock, site_id, event_id). Cross-site sync is a set
union, so merge is commutative, associative and idempotent by construction,
and the fold result is independent of arrival order.

Record sharing is a self-contained signed capability: an HMAC-tagged token
string (QR-encodable) that any site holding the shared key can verify
offline, checked against consent-revocation events in the log.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import json
import re
from dataclasses import dataclass, field, replace

from . import emr_model
from .emr_model import FieldProvenance, PatientRecord, canonical_value

_ENTRY_PATH_RE = re.compile(r"^current_pregnancy\.(vitals|symptoms|fetal_movement)\[(\d+)\]\.(\w+)$")

TOKEN_PREFIX = "AES1."
DEFAULT_TOKEN_TTL = 72 * 3600  # seconds; patient-configurable per issuance

PAYLOAD_KINDS = (
    "field_set",
    "field_verify",
    "symptom_add",
    "vital_add",
    "lab_update",
    "alert_fired",
    "alert_status",
    "alert_review",
    "consent_grant",
    "consent_revoke",
    "content_delivered",
    "token_redeemed",
)


class PortabilityError(ValueError):
    pass


class RecordIdMismatch(PortabilityError):
    pass


class TokenRejected(PortabilityError):
    """Redemption failure; ``reason`` is one of bad_mac, expired, revoked."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


# ---------------------------------------------------------------------------
# Events
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RecordEvent:
    event_id: str
    record_id: str
    site_id: str
    actor: str  # "patient" | "clinician:<id>" | "system"
    lclock: int
    wall_time: str
    payload: dict

    def sort_key(self) -> tuple:
        return (self.lclock, self.site_id, self.event_id)


def make_event_id(site_id: str, counter: int, record_id: str, lclock: int, payload: dict) -> str:
    """Deterministic globally-unique id: site + counter + content-hash suffix."""
    digest = hashlib.sha256(
        f"{site_id}|{counter}|{record_id}|{lclock}|{canonical_value(payload)}".encode()
    ).hexdigest()[:8]
    return f"{site_id}-{counter:06d}-{digest}"


def event_to_line(event: RecordEvent) -> str:
    return canonical_value(
        {
            "actor": event.actor,
            "event_id": event.event_id,
            "lclock": event.lclock,
            "payload": event.payload,
            "record_id": event.record_id,
            "site_id": event.site_id,
            "wall_time": event.wall_time,
        }
    )


def event_from_line(line: str) -> RecordEvent:
    obj = json.loads(line)
    return RecordEvent(
        event_id=obj["event_id"],
        record_id=obj["record_id"],
        site_id=obj["site_id"],
        actor=obj["actor"],
        lclock=obj["lclock"],
        wall_time=obj["wall_time"],
        payload=obj["payload"],
    )


@dataclass
class EventLog:
    """Grow-only event set for one record; append-only, no mutation ever."""

    record_id: str
    events: dict[str, RecordEvent] = field(default_factory=dict)

    def add(self, event: RecordEvent) -> bool:
        if event.record_id != self.record_id:
            raise RecordIdMismatch(f"{event.record_id} != {self.record_id}")
        if event.event_id in self.events:
            return False
        self.events[event.event_id] = event
        return True

    def canonical(self) -> list[RecordEvent]:
        return sorted(self.events.values(), key=RecordEvent.sort_key)

    def max_lclock(self) -> int:
        return max((e.lclock for e in self.events.values()), default=0)

    def __len__(self) -> int:
        return len(self.events)


def merge(log_a: EventLog, log_b: EventLog) -> EventLog:
    """Set union by event_id; fold(merge(a, b)) is then well-defined."""
    if log_a.record_id != log_b.record_id:
        raise RecordIdMismatch(f"{log_a.record_id} != {log_b.record_id}")
    merged = EventLog(record_id=log_a.record_id)
    merged.events.update(log_a.events)
    merged.events.update(log_b.events)
    return merged


# ---------------------------------------------------------------------------
# Fold
# ---------------------------------------------------------------------------


@dataclass
class FoldState:
    """Full materialized state: the EMR plus alert/consent/delivery overlays."""

    record: PatientRecord
    alerts: dict[str, dict] = field(default_factory=dict)
    grants: dict[str, dict] = field(default_factory=dict)
    revoked: set[str] = field(default_factory=set)
    delivered: set[str] = field(default_factory=set)
    redemptions: list[dict] = field(default_factory=list)
    skipped: list[tuple[str, str]] = field(default_factory=list)  # (event_id, reason)


def fold_state(events: list[RecordEvent] | EventLog) -> FoldState:
    """Apply events in canonical order; malformed payloads are skipped and
    reported, never abort the fold."""
    if isinstance(events, EventLog):
        record_id = events.record_id
        ordered = events.canonical()
    else:
        ordered = sorted(events, key=RecordEvent.sort_key)
        record_id = ordered[0].record_id if ordered else ""
        for e in ordered:
            if e.record_id != record_id:
                raise RecordIdMismatch(f"{e.record_id} != {record_id}")

    state = FoldState(record=PatientRecord(record_id=record_id))
    for event in ordered:
        try:
            _apply(state, event)
        except Exception as exc:  # skip, report, keep folding
            state.skipped.append((event.event_id, str(exc)))
        state.record.version += 1
    _finalize_entry_lists(state.record)
    return state


def _finalize_entry_lists(record: PatientRecord) -> None:
    """Sort time-ordered lists by date and materialize positional provenance.

    Entries carry their provenance inline ("_prov") while folding so a
    late-arriving earlier-dated entry cannot shift the indices out from
    under provenance keys written before it.
    """
    c = record.current_pregnancy
    for name, entries in (
        ("vitals", c.vitals),
        ("symptoms", c.symptoms),
        ("fetal_movement", c.fetal_movement),
    ):
        entries.sort(key=lambda e: e.get("date") or "")
        for idx, entry in enumerate(entries):
            prov = entry.pop("_prov", None)
            if not prov:
                continue
            for key, p in prov.items():
                record.provenance[f"current_pregnancy.{name}[{idx}].{key}"] = p


def fold(events: list[RecordEvent] | EventLog) -> PatientRecord:
    return fold_state(events).record


def _provenance(event: RecordEvent, payload_prov: dict | None) -> FieldProvenance:
    prov = payload_prov or {}
    if event.actor.startswith("clinician"):
        default_source = "clinician_entered"
    elif event.actor == "patient":
        default_source = "patient_reported"
    else:
        default_source = "extracted"  # system-derived values
    return FieldProvenance(
        source=prov.get("source", default_source),
        verified=False,
        encounter_id=prov.get("encounter_id", ""),
        site_id=event.site_id,
        timestamp=event.wall_time,
        raw_utterance_ref=prov.get("raw_utterance_ref"),
    )


def _apply(state: FoldState, event: RecordEvent) -> None:
    record = state.record
    payload = event.payload
    kind = payload.get("kind")

    if kind == "field_set":
        path, value = payload["path"], payload["value"]
        prov = _provenance(event, payload.get("provenance"))
        if emr_model.path_template(path) == "current_pregnancy.fetal_movement[]":
            # date-sorted list: keep provenance inline until the final sort
            if not isinstance(value, dict):
                raise PortabilityError("fetal_movement entry must be an object")
            value = dict(value)
            value["_prov"] = {k: prov for k in value if k != "_prov"}
            record.current_pregnancy.fetal_movement.append(value)
            return
        concrete = emr_model.set_path(record, path, value)
        record.provenance[concrete] = prov
        if path == "current_pregnancy.lmp_date" and isinstance(value, str):
            from datetime import date as _date

            edd = emr_model.compute_edd(_date.fromisoformat(value))
            record.current_pregnancy.edd = edd.isoformat()
            record.provenance["current_pregnancy.edd"] = prov
        if isinstance(value, dict):
            for sub in value:
                record.provenance[f"{concrete}.{sub}"] = prov

    elif kind == "field_verify":
        path = payload["path"]
        if not event.actor.startswith("clinician"):
            raise PortabilityError("field_verify requires a clinician actor")
        entry_ref = _ENTRY_PATH_RE.match(path)
        if entry_ref:
            name, idx, key = entry_ref.group(1), int(entry_ref.group(2)), entry_ref.group(3)
            entries = sorted(
                getattr(record.current_pregnancy, name), key=lambda e: e.get("date") or ""
            )
            if idx >= len(entries) or key not in entries[idx].get("_prov", {}):
                raise PortabilityError(f"verify of unpopulated path {path}")
            entries[idx]["_prov"] = dict(entries[idx]["_prov"])
            entries[idx]["_prov"][key] = replace(entries[idx]["_prov"][key], verified=True)
            return
        prov = record.provenance.get(path)
        if prov is None:
            raise PortabilityError(f"verify of unpopulated path {path}")
        record.provenance[path] = replace(prov, verified=True)

    elif kind == "vital_add":
        entry = {"date": payload["date"]}
        for key in ("bp_systolic", "bp_diastolic", "weight_kg"):
            if key in payload and payload[key] is not None:
                entry[key] = payload[key]
        prov = _provenance(event, payload.get("provenance"))
        entry["_prov"] = {key: prov for key in entry if key != "_prov"}
        record.current_pregnancy.vitals.append(entry)

    elif kind == "symptom_add":
        entry = {
            "date": payload["date"],
            "clinical_term": payload["clinical_term"],
            "raw_ref": payload.get("raw_ref"),
        }
        entry["_prov"] = {"clinical_term": _provenance(event, payload.get("provenance"))}
        record.current_pregnancy.symptoms.append(entry)

    elif kind == "lab_update":
        test = payload["test"]
        lab = record.current_pregnancy.labs.setdefault(
            test, {"status": "not_done", "result": "", "date": None}
        )
        for key in ("status", "result", "date"):
            if key in payload and payload[key] is not None:
                lab[key] = payload[key]
                record.provenance[f"current_pregnancy.labs.{test}.{key}"] = _provenance(
                    event, payload.get("provenance")
                )

    elif kind == "alert_fired":
        alert = dict(payload["alert"])
        state.alerts[alert["alert_id"]] = alert

    elif kind == "alert_status":
        alert = state.alerts.get(payload["alert_id"])
        if alert is None:
            raise PortabilityError(f"status for unknown alert {payload['alert_id']}")
        alert["status"] = payload["status"]

    elif kind == "alert_review":
        alert = state.alerts.get(payload["alert_id"])
        if alert is None:
            raise PortabilityError(f"review for unknown alert {payload['alert_id']}")
        if alert.get("review") is not None:
            raise PortabilityError(f"alert {payload['alert_id']} already reviewed")
        alert["review"] = {
            "accurate": payload["accurate"],
            "relevant": payload["relevant"],
            "reviewer": payload["reviewer"],
            "timestamp": payload.get("timestamp", event.wall_time),
        }

    elif kind == "consent_grant":
        state.grants[payload["grant_id"]] = {
            "capability": payload["capability"],
            "expiry": payload["expiry"],
            "grantee_site": payload.get("grantee_site"),
        }

    elif kind == "consent_revoke":
        state.revoked.add(payload["grant_ref"])

    elif kind == "content_delivered":
        state.delivered.add(payload["item_id"])

    elif kind == "token_redeemed":
        state.redemptions.append(
            {"grant_ref": payload["grant_ref"], "site": event.site_id, "at": event.wall_time}
        )

    else:
        raise PortabilityError(f"unknown payload kind {kind!r}")


# ---------------------------------------------------------------------------
# Share tokens
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grant:
    record_id: str
    capability: str  # "read" | "read_write"
    nonce: str
    expiry: int  # epoch seconds


def _b64(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def _tag(body_b64: str, key: bytes) -> str:
    mac = hmac.new(key, (TOKEN_PREFIX + body_b64).encode("ascii"), hashlib.sha256)
    return _b64(mac.digest()[:16])


def make_token(
    record_id: str, capability: str, ttl_seconds: int, key: bytes, *, now: int, nonce: str
) -> tuple[str, dict]:
    """Build a share token plus the consent_grant payload to append with it.

    Pure: the caller supplies ``now`` and a unique ``nonce`` (the gateway
    derives the nonce from its event counter, keeping replays byte-identical).
    """
    if capability not in ("read", "read_write"):
        raise PortabilityError(f"unknown capability {capability!r}")
    expiry = now + int(ttl_seconds)
    body = canonical_value(
        {"cap": capability, "exp": expiry, "nonce": nonce, "record_id": record_id}
    )
    body_b64 = _b64(body.encode("ascii"))
    token = f"{TOKEN_PREFIX}{body_b64}.{_tag(body_b64, key)}"
    grant_payload = {
        "kind": "consent_grant",
        "grant_id": nonce,
        "capability": capability,
        "expiry": expiry,
    }
    return token, grant_payload


def verify_token(token: str, key: bytes, *, now: int, revoked: set[str] = frozenset()) -> Grant:
    """Check MAC, expiry, and revocation; raises TokenRejected with a
    distinguishable reason."""
    if not token.startswith(TOKEN_PREFIX):
        raise TokenRejected("bad_mac")
    rest = token[len(TOKEN_PREFIX) :]
    if "." not in rest:
        raise TokenRejected("bad_mac")
    body_b64, tag_b64 = rest.split(".", 1)
    # compare encoded tags as strings: any byte change in either part fails
    if not hmac.compare_digest(_tag(body_b64, key), tag_b64):
        raise TokenRejected("bad_mac")
    try:
        pad = "=" * (-len(body_b64) % 4)
        body = json.loads(base64.urlsafe_b64decode(body_b64 + pad))
        grant = Grant(
            record_id=body["record_id"],
            capability=body["cap"],
            nonce=body["nonce"],
            expiry=int(body["exp"]),
        )
    except Exception:
        raise TokenRejected("bad_mac") from None
    if now >= grant.expiry:
        raise TokenRejected("expired")
    if grant.nonce in revoked:
        raise TokenRejected("revoked")
    return grant


def revoked_grants(events: list[RecordEvent] | EventLog) -> set[str]:
    if isinstance(events, EventLog):
        events = list(events.events.values())
    return {
        e.payload["grant_ref"] for e in events if e.payload.get("kind") == "consent_revoke"
    }


def redeem_token(
    token: str, site_id: str, now: int, key: bytes, log: EventLog
) -> tuple[Grant, dict]:
    """Grant iff MAC valid, unexpired, and not revoked anywhere in the log.

    Returns the grant plus the audit payload the caller must append.
    Revocation wins regardless of when the revoke event arrived.
    """
    grant = verify_token(token, key, now=now, revoked=revoked_grants(log))
    if grant.record_id != log.record_id:
        raise TokenRejected("bad_mac")
    audit = {"kind": "token_redeemed", "grant_ref": grant.nonce, "site": site_id}
    return grant, audit
