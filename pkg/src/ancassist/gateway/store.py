"""Persistence for the gateway.

One append-only event file per record (newline-delimited canonical JSON,
bit-exact), session snapshot files, a sender registry, processed message
ids, and an outbound log. Everything also works fully in-memory
(data_dir=None) for transcript replay and tests.

Appends for one record are serialized behind a per-record lock; the event
counter and logical clock are derived from the log itself, so a store can
always be rebuilt from its files.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path

from .. import record_portability as rp
from ..emr_model import canonical_value
from ..interview_flow import Session


class Store:
    def __init__(self, data_dir: str | Path | None = None, site_id: str = "desk"):
        self.site_id = site_id
        self.data_dir = Path(data_dir) if data_dir else None
        self._logs: dict[str, rp.EventLog] = {}
        self._counters: dict[str, int] = {}  # per-record, this site's event counter
        self._sessions: dict[str, Session] = {}
        self._senders: dict[str, str] = {}  # sender_ref -> record_id
        self._seen: set[str] = set()
        self._outbound: list[dict] = []
        self._locks: dict[str, threading.Lock] = {}
        self._global_lock = threading.Lock()
        if self.data_dir:
            self._load()

    # -- filesystem layout --------------------------------------------------

    def _records_dir(self) -> Path:
        return self.data_dir / "records"

    def _sessions_dir(self) -> Path:
        return self.data_dir / "sessions"

    def _load(self) -> None:
        self._records_dir().mkdir(parents=True, exist_ok=True)
        self._sessions_dir().mkdir(parents=True, exist_ok=True)
        for path in sorted(self._records_dir().glob("*.events")):
            record_id = path.stem
            log = rp.EventLog(record_id=record_id)
            counter = -1
            for line in path.read_text("utf-8").splitlines():
                if not line.strip():
                    continue
                event = rp.event_from_line(line)
                log.add(event)
                if event.site_id == self.site_id:
                    counter = max(counter, int(event.event_id.rsplit("-", 2)[1]))
            self._logs[record_id] = log
            self._counters[record_id] = counter + 1
        for path in sorted(self._sessions_dir().glob("*.json")):
            session = Session.from_dict(json.loads(path.read_text("utf-8")))
            self._sessions[session.record_id] = session
        senders = self.data_dir / "senders.json"
        if senders.exists():
            self._senders = json.loads(senders.read_text("utf-8"))
        seen = self.data_dir / "seen_messages.json"
        if seen.exists():
            self._seen = set(json.loads(seen.read_text("utf-8")))

    def lock_for(self, key: str) -> threading.Lock:
        with self._global_lock:
            return self._locks.setdefault(key, threading.Lock())

    # -- events ---------------------------------------------------------------

    def record_ids(self) -> list[str]:
        return sorted(self._logs)

    def log(self, record_id: str) -> rp.EventLog:
        if record_id not in self._logs:
            self._logs[record_id] = rp.EventLog(record_id=record_id)
            self._counters.setdefault(record_id, 0)
        return self._logs[record_id]

    def append_event(self, record_id: str, actor: str, wall_time: str, payload: dict) -> rp.RecordEvent:
        log = self.log(record_id)
        counter = self._counters.get(record_id, 0)
        lclock = log.max_lclock() + 1
        event = rp.RecordEvent(
            event_id=rp.make_event_id(self.site_id, counter, record_id, lclock, payload),
            record_id=record_id,
            site_id=self.site_id,
            actor=actor,
            lclock=lclock,
            wall_time=wall_time,
            payload=payload,
        )
        log.add(event)
        self._counters[record_id] = counter + 1
        if self.data_dir:
            path = self._records_dir() / f"{record_id}.events"
            with path.open("a", encoding="utf-8") as fh:
                fh.write(rp.event_to_line(event) + "\n")
        return event

    def merge_events(self, record_id: str, events: list[rp.RecordEvent]) -> int:
        """Union-in events from another site; returns how many were new."""
        log = self.log(record_id)
        added = 0
        for event in events:
            if log.add(event):
                added += 1
                if self.data_dir:
                    path = self._records_dir() / f"{record_id}.events"
                    with path.open("a", encoding="utf-8") as fh:
                        fh.write(rp.event_to_line(event) + "\n")
        return added

    def fold(self, record_id: str) -> rp.FoldState:
        return rp.fold_state(self.log(record_id))

    # -- sessions, senders, dedup ----------------------------------------------

    def session(self, record_id: str) -> Session | None:
        return self._sessions.get(record_id)

    def put_session(self, session: Session) -> None:
        self._sessions[session.record_id] = session
        if self.data_dir:
            path = self._sessions_dir() / f"{session.record_id}.json"
            path.write_text(
                json.dumps(session.to_dict(), ensure_ascii=True, sort_keys=True), "utf-8"
            )

    def sender_record(self, sender_ref: str) -> str | None:
        return self._senders.get(sender_ref)

    def register_sender(self, sender_ref: str, record_id: str) -> None:
        self._senders[sender_ref] = record_id
        if self.data_dir:
            (self.data_dir / "senders.json").write_text(
                json.dumps(self._senders, ensure_ascii=True, sort_keys=True), "utf-8"
            )

    def seen_message(self, message_id: str) -> bool:
        return message_id in self._seen

    def mark_seen(self, message_id: str) -> None:
        self._seen.add(message_id)
        if self.data_dir:
            (self.data_dir / "seen_messages.json").write_text(
                json.dumps(sorted(self._seen), ensure_ascii=True), "utf-8"
            )

    def persist_outbound(self, outbound: dict) -> None:
        self._outbound.append(outbound)
        if self.data_dir:
            with (self.data_dir / "outbound.ndjson").open("a", encoding="utf-8") as fh:
                fh.write(canonical_value(outbound) + "\n")

    @property
    def outbound_log(self) -> list[dict]:
        return list(self._outbound)
