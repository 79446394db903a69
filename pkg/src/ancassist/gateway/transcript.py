"""Deterministic transcript replay.

A transcript is newline-delimited JSON, one inbound message per line, with
the InboundMessage fields. Replaying through a fresh in-memory gateway
yields the final canonical record(s) and the full outbound log; both are
byte-stable, which is what the golden tests pin.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from ..emr_model import canonical_value
from .core import Gateway, InboundMessage, OutboundMessage


class TranscriptError(ValueError):
    pass


@dataclass
class TranscriptResult:
    records: dict[str, str]  # record_id -> canonical record JSON (one line + \n)
    outbound: list[OutboundMessage]
    event_lines: dict[str, list[str]]

    def outbound_text(self) -> str:
        return "".join(canonical_value(o.to_dict()) + "\n" for o in self.outbound)

    def records_text(self) -> str:
        return "".join(self.records[rid] for rid in sorted(self.records))


def parse_transcript(text: str) -> list[InboundMessage]:
    messages = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            obj = json.loads(line)
            messages.append(
                InboundMessage(
                    message_id=obj["message_id"],
                    sender_ref=obj["sender_ref"],
                    kind=obj.get("kind", "text"),
                    channel_timestamp=obj["channel_timestamp"],
                    body=obj.get("body"),
                    media_ref=obj.get("media_ref"),
                )
            )
        except (json.JSONDecodeError, KeyError) as exc:
            raise TranscriptError(f"line {lineno}: {exc}") from None
    return messages


def run_transcript(gateway: Gateway, transcript_text: str) -> TranscriptResult:
    """Play all messages in order; returns final records and outbound log."""
    outbound: list[OutboundMessage] = []
    for message in parse_transcript(transcript_text):
        outbound.extend(gateway.handle_inbound(message))
    from .. import record_portability as rp

    records = {}
    event_lines = {}
    for record_id in gateway.store.record_ids():
        records[record_id] = gateway.export_record(record_id)
        event_lines[record_id] = [
            rp.event_to_line(e) for e in gateway.store.log(record_id).canonical()
        ]
    return TranscriptResult(records=records, outbound=outbound, event_lines=event_lines)
