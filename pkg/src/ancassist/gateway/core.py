"""Message-handling core: routing, interview driving, alerts, content.

One Gateway instance owns a Store plus the loaded flow, rules, lexicon and
content fixtures. Every inbound message is processed exactly once per
message_id; all state lands as record events; replies are generated
synchronously and persisted before "send" (the simulated channel just
collects them).
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass, field
from datetime import date, datetime, timezone

from .. import alert_rules, companion_content, interview_flow, record_portability as rp, utterance_parse
from ..emr_model import canonical_json
from .store import Store

COMMAND_WORDS = {"share": "share", "status": "status", "help": "help", "madad": "help"}
ENROLL_WORDS = {"start", "shuru", "salam", "salaam", "assalamoalaikum"}
INTERROGATIVES = {
    "kya", "kab", "kyun", "kiun", "kitna", "kitni", "kitne", "kaise", "kese",
    "kahan", "kaun", "kon", "konsa", "how", "when", "why", "what", "which",
    "can", "could", "should",
}

TEXTS = {
    "enroll_prompt": {
        "ur": "Assalam o alaikum! Sehat Saathi mein khush amdeed. Shuru karne ke liye 'start' likh kar bhejein.",
        "en": "Welcome! To begin, send the word 'start'.",
    },
    "welcome": {
        "ur": "Khush amdeed! Main aap ke hamal ke safar mein aap ki saathi hoon. Aap ki maloomat sirf aap ki hain — 'share' likh kar aap jab chahein apna record kisi doctor se share kar sakti hain. Chaliye shuru karte hain.",
        "en": "Welcome! I will keep your pregnancy record with you. Your information stays yours — send 'share' anytime to share it with a clinician. Let us begin.",
    },
    "pause": {
        "ur": "Aaj ke liye itne sawal kafi hain — shukriya! Jab aap tayyar hon, koi bhi paighaam bhej dein, hum wahin se shuru karenge.",
        "en": "That is enough questions for today — thank you! Message me anytime and we will pick up where we left off.",
    },
    "complete": {
        "ur": "Shukriya! Aap ke record ke bunyadi sawalat mukammal ho gaye hain. Aap kabhi bhi sawal pooch sakti hain, ya 'share' likh kar doctor ke liye QR token le sakti hain.",
        "en": "Thank you! The basic interview is complete. Ask me anything, or send 'share' to get a QR token for your doctor.",
    },
    "clarify": {
        "ur": "Maaf kijiye, mujhe theek se samajh nahi aaya.",
        "en": "Sorry, I did not quite understand.",
    },
    "media_received": {
        "ur": "Report mil gayi — shukriya! Hum ne usay review ke liye mehfooz kar liya hai.",
        "en": "Report received — thank you! It has been saved for review.",
    },
    "media_unreadable": {
        "ur": "Maaf kijiye, ye cheez khul nahi saki. Barah-e-karam dobara bhejein ya likh kar batayen.",
        "en": "Sorry, that could not be read. Please resend it or type the answer.",
    },
    "help": {
        "ur": "Aap mujhse hamal ke baare mein koi bhi sawal pooch sakti hain. 'share' = doctor ke liye record token, 'status' = record ka khulasa, 'help' = ye paighaam.",
        "en": "Ask me any pregnancy question. Commands: 'share' for a record token, 'status' for a summary, 'help' for this message.",
    },
    "voice_on_text_node": {
        "ur": "Barah-e-karam is sawal ka jawab likh kar bhejein.",
        "en": "Please answer this question by typing.",
    },
}


@dataclass(frozen=True)
class InboundMessage:
    message_id: str
    sender_ref: str
    kind: str  # text | audio_ref | image_ref
    channel_timestamp: str  # ISO datetime
    body: str | None = None
    media_ref: str | None = None


@dataclass(frozen=True)
class OutboundMessage:
    recipient_ref: str
    text: str
    reply_to: str | None
    created_at: str

    def to_dict(self) -> dict:
        return {
            "created_at": self.created_at,
            "recipient_ref": self.recipient_ref,
            "reply_to": self.reply_to,
            "text": self.text,
        }


@dataclass(frozen=True)
class RoutingDecision:
    route: str  # interview_answer | companion_question | command | media_intake | unroutable
    command: str | None = None
    extraction: utterance_parse.Extraction | None = None


@dataclass
class GatewayConfig:
    site_id: str = "desk"
    language: str = "ur"
    signing_key: bytes = b"dev-signing-key-change-me"
    token_ttl: int = rp.DEFAULT_TOKEN_TTL
    clinician_key: str = "clinic-dev-key"


def _epoch(ts: str) -> int:
    return int(datetime.fromisoformat(ts).replace(tzinfo=timezone.utc).timestamp())


class Gateway:
    def __init__(
        self,
        store: Store | None = None,
        config: GatewayConfig | None = None,
        *,
        flow: interview_flow.FlowDocument | None = None,
        rules: list[alert_rules.Rule] | None = None,
        lexicon: utterance_parse.Lexicon | None = None,
        content: list[companion_content.ContentItem] | None = None,
        faq: list[companion_content.FAQEntry] | None = None,
        adapters: utterance_parse.Adapters | None = None,
    ):
        self.config = config or GatewayConfig()
        self.store = store or Store(site_id=self.config.site_id)
        self.flow = flow or interview_flow.default_flow()
        self.rules = rules if rules is not None else alert_rules.default_rules()
        self.lexicon = lexicon or utterance_parse.default_lexicon()
        self.content = content if content is not None else companion_content.default_content()
        self.faq = faq if faq is not None else companion_content.default_faq(self.lexicon)
        self.adapters = adapters or utterance_parse.Adapters(asr=utterance_parse.MockAsrAdapter())
        self.rules_by_id = {r.rule_id: r for r in self.rules}

    # -- helpers ---------------------------------------------------------------

    def _tokens(self, text: str) -> list[str]:
        return utterance_parse.normalize(text, self.lexicon.folding)

    def _text(self, key: str) -> str:
        entry = TEXTS[key]
        return entry.get(self.config.language) or entry["en"]

    def _fold(self, record_id: str) -> rp.FoldState:
        return self.store.fold(record_id)

    def _session(self, record_id: str) -> interview_flow.Session:
        session = self.store.session(record_id)
        if session is None:
            session = interview_flow.Session(
                session_id=f"s-{record_id}", record_id=record_id, flow_id=self.flow.flow_id
            )
            self.store.put_session(session)
        return session

    def _interrogative_tokens(self) -> set[str]:
        fold = self.lexicon.folding
        return {utterance_parse._fold_token(w, fold) for w in INTERROGATIVES}

    # -- routing ---------------------------------------------------------------

    def route_message(
        self,
        message: InboundMessage,
        session: interview_flow.Session,
        text: str | None,
    ) -> RoutingDecision:
        """Command words first; then pending-answer extraction; then question
        markers; then the re-ask path; images are media intake."""
        if message.kind == "image_ref":
            return RoutingDecision(route="media_intake")
        tokens = self._tokens(text or "")
        if tokens and tokens[0] in COMMAND_WORDS and len(tokens) <= 3:
            return RoutingDecision(route="command", command=COMMAND_WORDS[tokens[0]])

        pending = session.status == "awaiting_answer"
        interrogative = bool(set(tokens) & self._interrogative_tokens())
        ends_question = (text or "").rstrip().endswith("?")
        # a marked question ("kya ...?") outranks accidental value hits such
        # as number words inside the question
        strong_question = interrogative and ends_question

        if pending and not strong_question:
            node = self.flow.by_id[session.awaiting_node_id]
            extraction = utterance_parse.extract_value(
                node.expected_type,
                text or "",
                encounter_date=date.fromisoformat(message.channel_timestamp[:10]),
                lexicon=self.lexicon,
                choices=list(node.choices) if node.choices else None,
            )
            if not extraction.failed:
                return RoutingDecision(route="interview_answer", extraction=extraction)
        if interrogative or ends_question:
            return RoutingDecision(route="companion_question")
        if pending:
            return RoutingDecision(route="interview_answer")  # re-ask path
        if session.status != "complete":
            # mid-interview contact (e.g. after an encounter pause) resumes it
            return RoutingDecision(route="interview_answer")
        return RoutingDecision(route="unroutable")

    # -- event emission ----------------------------------------------------------

    def _append(self, record_id: str, actor: str, ts: str, payload: dict) -> None:
        self.store.append_event(record_id, actor, ts, payload)

    def _emit_field_write(
        self, record_id: str, write: interview_flow.FieldWrite, ts: str, encounter_id: str
    ) -> None:
        source = "extracted" if write.method in ("lexicon", "plugin") or write.modality == "voice" else "patient_reported"
        provenance = {
            "source": source,
            "encounter_id": encounter_id,
            "raw_utterance_ref": write.raw_ref,
        }
        day = ts[:10]
        template = write.path
        if write.value in ("unknown", "refused") and (
            template.startswith("current_pregnancy.vitals[]")
            or template.startswith("current_pregnancy.symptoms[]")
            or template.startswith("current_pregnancy.labs.")
            or template.startswith("current_pregnancy.fetal_movement[]")
        ):
            return  # nothing observable to record for list-style targets
        if template == "family_history[0].condition" and write.value in ("none", "unknown", "refused"):
            return  # "no family condition" adds no FamilyCondition entry
        if template == "family_history[0].lineage":
            state = self._fold(record_id)
            if not state.record.family_history:
                return  # lineage without a recorded condition entry
        if template == "current_pregnancy.vitals[].bp":
            payload = {
                "kind": "vital_add",
                "date": day,
                "bp_systolic": write.value["bp_systolic"],
                "bp_diastolic": write.value["bp_diastolic"],
                "provenance": provenance,
            }
        elif template == "current_pregnancy.vitals[].weight_kg":
            payload = {"kind": "vital_add", "date": day, "weight_kg": write.value, "provenance": provenance}
        elif template == "current_pregnancy.symptoms[]":
            payload = {
                "kind": "symptom_add",
                "date": day,
                "clinical_term": write.value,
                "raw_ref": write.raw_ref,
                "provenance": provenance,
            }
        elif template == "current_pregnancy.labs.ogtt":
            status = "done" if write.value == "yes" else "not_done"
            payload = {"kind": "lab_update", "test": "ogtt", "status": status, "provenance": provenance}
        elif template == "current_pregnancy.fetal_movement[]":
            status = "normal" if write.value == "yes" else "reduced"
            payload = {
                "kind": "field_set",
                "path": "current_pregnancy.fetal_movement[]",
                "value": {"date": day, "status": status},
                "provenance": provenance,
            }
        else:
            payload = {"kind": "field_set", "path": write.path, "value": write.value, "provenance": provenance}
        self._append(record_id, "patient", ts, payload)

    def _evaluate_alerts(self, record_id: str, ts: str, outbox: list[OutboundMessage], message: InboundMessage) -> None:
        state = self._fold(record_id)
        fired = alert_rules.evaluate(
            state.record, self.rules, ts[:10], existing=state.alerts.values()
        )
        for alert in fired:
            self._append(record_id, "system", ts, {"kind": "alert_fired", "alert": alert.to_payload()})
            rule = self.rules_by_id[alert.rule_id]
            text = alert_rules.render(alert, rule, state.record, "patient", self.config.language)
            self._reply(outbox, message, text)

    def _deliver_due_content(self, record_id: str, ts: str, outbox: list[OutboundMessage], message: InboundMessage) -> None:
        state = self._fold(record_id)
        due = companion_content.due_messages(state.record, ts[:10], state.delivered, self.content)
        for item in due.items:
            self._append(record_id, "system", ts, {"kind": "content_delivered", "item_id": item.item_id})
            self._reply(outbox, message, item.text(self.config.language))

    def _reply(self, outbox: list[OutboundMessage], message: InboundMessage, text: str) -> None:
        outbound = OutboundMessage(
            recipient_ref=message.sender_ref,
            text=text,
            reply_to=message.message_id,
            created_at=message.channel_timestamp,
        )
        self.store.persist_outbound(outbound.to_dict())
        outbox.append(outbound)

    # -- interview driving ---------------------------------------------------------

    def _advance_interview(
        self, record_id: str, session: interview_flow.Session, message: InboundMessage, outbox: list[OutboundMessage]
    ) -> None:
        was_complete = session.status == "complete"
        state = self._fold(record_id)
        step = interview_flow.next_question(
            session, self.flow, state.record, as_of=message.channel_timestamp[:10]
        )
        if isinstance(step, interview_flow.Ask):
            self._reply(outbox, message, step.node.prompt(step.phrasing_index, self.config.language))
        elif isinstance(step, interview_flow.EncounterPause):
            self._reply(outbox, message, self._text("pause"))
        elif isinstance(step, interview_flow.Complete) and not was_complete:
            self._reply(outbox, message, self._text("complete"))
        self.store.put_session(session)

    def _handle_interview_answer(
        self,
        record_id: str,
        session: interview_flow.Session,
        message: InboundMessage,
        text: str | None,
        decision: RoutingDecision,
        outbox: list[OutboundMessage],
    ) -> None:
        ts = message.channel_timestamp
        if session.paused:
            session.start_new_encounter()
        if session.status != "awaiting_answer":
            self._advance_interview(record_id, session, message, outbox)
            return
        node = self.flow.by_id[session.awaiting_node_id]
        if message.kind == "audio_ref" and "voice" not in node.modalities:
            self._reply(outbox, message, self._text("voice_on_text_node"))
            return
        extraction = decision.extraction
        if extraction is None:
            try:
                extraction = utterance_parse.parse_utterance(
                    node,
                    message,
                    adapters=self.adapters,
                    encounter_date=date.fromisoformat(ts[:10]),
                    lexicon=self.lexicon,
                )
            except utterance_parse.ModalityNotAllowed:
                self._reply(outbox, message, self._text("voice_on_text_node"))
                return
            except utterance_parse.MediaUnreadable:
                self._reply(outbox, message, self._text("media_unreadable"))
                return
        raw_ref = message.media_ref if message.kind != "text" else message.message_id
        result = interview_flow.record_answer(
            session,
            self.flow,
            node,
            extraction,
            timestamp=ts,
            modality="voice" if message.kind == "audio_ref" else "text",
            raw_ref=raw_ref,
        )
        if result.clarify:
            prompt = node.prompt(session.awaiting_phrasing, self.config.language)
            self._reply(outbox, message, f"{self._text('clarify')} {prompt}")
            self.store.put_session(session)
            return
        for write in result.writes:
            self._emit_field_write(record_id, write, ts, session.encounter_id())
        if result.writes:
            self._evaluate_alerts(record_id, ts, outbox, message)
        self._advance_interview(record_id, session, message, outbox)

    # -- commands -------------------------------------------------------------------

    def issue_share_token(self, record_id: str, capability: str, ttl: int, now_ts: str) -> str:
        """Patient-initiated token issuance; grant event appended with it."""
        log = self.store.log(record_id)
        nonce = f"{record_id[:12]}-{len(log)}-{self.store.site_id}"
        token, grant_payload = rp.make_token(
            record_id, capability, ttl, self.config.signing_key, now=_epoch(now_ts), nonce=nonce
        )
        self._append(record_id, "patient", now_ts, grant_payload)
        return token

    def _handle_command(
        self, command: str, record_id: str, message: InboundMessage, outbox: list[OutboundMessage]
    ) -> None:
        ts = message.channel_timestamp
        if command == "share":
            token = self.issue_share_token(record_id, "read", self.config.token_ttl, ts)
            hours = self.config.token_ttl // 3600
            self._reply(
                outbox,
                message,
                f"Aap ka record-share token ({hours}h): {token} — doctor isay scan ya enter kar ke, "
                "aap ki ijazat se, aap ka record dekh sakte hain.",
            )
        elif command == "status":
            state = self._fold(record_id)
            rec = state.record
            ga = None
            if rec.current_pregnancy.lmp_date:
                from ..emr_model import gestational_age

                try:
                    ga_val = gestational_age(
                        date.fromisoformat(rec.current_pregnancy.lmp_date),
                        date.fromisoformat(ts[:10]),
                    )
                    ga = f"{ga_val.weeks}w{ga_val.days}d"
                except Exception:
                    ga = None
            alerts_open = sum(1 for a in state.alerts.values() if a.get("status") == "new")
            self._reply(
                outbox,
                message,
                f"Record v{rec.version} | GA: {ga or 'namaloom (LMP chahiye)'} | "
                f"EDD: {rec.current_pregnancy.edd or 'namaloom'} | naye alerts: {alerts_open}",
            )
        else:
            self._reply(outbox, message, self._text("help"))

    # -- media ------------------------------------------------------------------------

    def _handle_media(self, record_id: str, session, message: InboundMessage, outbox: list[OutboundMessage]) -> None:
        ts = message.channel_timestamp
        test = "report"
        if session.status == "awaiting_answer":
            node = self.flow.by_id[session.awaiting_node_id]
            if node.target_path.startswith("current_pregnancy.labs."):
                test = node.target_path.rsplit(".", 1)[1]
        self._append(
            record_id,
            "patient",
            ts,
            {
                "kind": "lab_update",
                "test": test,
                "status": "pending",
                "result": message.media_ref or "",
                "date": ts[:10],
                "provenance": {"source": "patient_reported", "raw_utterance_ref": message.media_ref},
            },
        )
        self._reply(outbox, message, self._text("media_received"))

    # -- companion ----------------------------------------------------------------------

    def _handle_question(self, record_id: str, message: InboundMessage, text: str, outbox: list[OutboundMessage]) -> None:
        ts = message.channel_timestamp
        result = companion_content.answer_question(
            text, self.faq, self.lexicon, language=self.config.language
        )
        if result.escalation_term:
            self._append(
                record_id,
                "system",
                ts,
                {
                    "kind": "symptom_add",
                    "date": ts[:10],
                    "clinical_term": result.escalation_term,
                    "raw_ref": message.message_id,
                    "provenance": {"source": "extracted", "raw_utterance_ref": message.message_id},
                },
            )
        self._reply(outbox, message, result.answer)
        if result.escalation_term:
            self._evaluate_alerts(record_id, ts, outbox, message)

    # -- entry point ------------------------------------------------------------------------

    def handle_inbound(self, message: InboundMessage) -> list[OutboundMessage]:
        """Process one channel message; idempotent on message_id."""
        lock = self.store.lock_for(message.sender_ref)
        with lock:
            return self._handle_inbound_locked(message)

    def _handle_inbound_locked(self, message: InboundMessage) -> list[OutboundMessage]:
        if self.store.seen_message(message.message_id):
            return []  # acknowledged, not reprocessed
        outbox: list[OutboundMessage] = []
        ts = message.channel_timestamp

        record_id = self.store.sender_record(message.sender_ref)
        if record_id is None:
            tokens = self._tokens(message.body or "")
            enroll = {utterance_parse._fold_token(w, self.lexicon.folding) for w in ENROLL_WORDS}
            if message.kind == "text" and set(tokens) & enroll:
                record_id = f"rec-{uuid.uuid5(uuid.NAMESPACE_URL, message.sender_ref).hex[:12]}"
                self.store.register_sender(message.sender_ref, record_id)
                self._append(
                    record_id,
                    "system",
                    ts,
                    {
                        "kind": "field_set",
                        "path": "demographics.contact_ref",
                        "value": message.sender_ref,
                        "provenance": {"source": "extracted"},
                    },
                )
                self._reply(outbox, message, self._text("welcome"))
                session = self._session(record_id)
                self._advance_interview(record_id, session, message, outbox)
            else:
                self._reply(outbox, message, self._text("enroll_prompt"))
            self.store.mark_seen(message.message_id)
            return outbox

        session = self._session(record_id)

        # voice notes are transcribed before routing so questions asked by
        # voice still reach the companion
        text = message.body
        if message.kind == "audio_ref":
            if self.adapters.asr is None:
                self._reply(outbox, message, self._text("media_unreadable"))
                self.store.mark_seen(message.message_id)
                return outbox
            try:
                text = self.adapters.asr.transcribe(message.media_ref).transcript
            except utterance_parse.MediaUnreadable:
                self._reply(outbox, message, self._text("media_unreadable"))
                self.store.mark_seen(message.message_id)
                return outbox

        decision = self.route_message(message, session, text)
        if decision.route == "command":
            self._handle_command(decision.command, record_id, message, outbox)
        elif decision.route == "media_intake":
            self._handle_media(record_id, session, message, outbox)
        elif decision.route == "companion_question":
            self._handle_question(record_id, message, text or "", outbox)
        elif decision.route == "interview_answer":
            self._handle_interview_answer(record_id, session, message, text, decision, outbox)
        else:
            self._reply(outbox, message, self._text("help"))

        self._deliver_due_content(record_id, ts, outbox, message)
        self.store.mark_seen(message.message_id)
        return outbox

    # -- console support ------------------------------------------------------------------------

    def export_record(self, record_id: str) -> str:
        return canonical_json(self._fold(record_id).record)

    def record_state(self, record_id: str) -> rp.FoldState:
        return self._fold(record_id)
