"""HTTP surface: channel webhook, simulated channel, and the clinician
console API.

Every record-touching console endpoint needs a valid share token (query
param or bearer header) or the clinician key header; writes additionally
need a read_write capability or the clinician key. All responses carry the
record version they reflect.
"""

from __future__ import annotations

from datetime import datetime, timezone
from pathlib import Path

from fastapi import Depends, FastAPI, Header, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .. import alert_rules, record_portability as rp
from ..emr_model import record_to_dict
from .core import Gateway, InboundMessage


class InboundBody(BaseModel):
    message_id: str
    sender_ref: str
    kind: str = "text"
    channel_timestamp: str | None = None
    body: str | None = None
    media_ref: str | None = None


class RedeemBody(BaseModel):
    token: str


class VerifyBody(BaseModel):
    path: str


class StatusBody(BaseModel):
    status: str


class ReviewBody(BaseModel):
    accurate: bool
    relevant: bool
    reviewer: str = "console"


def _now_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S")


def create_app(gateway: Gateway, static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="ancassist gateway", version="0.1.0")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    def _epoch_now() -> int:
        return int(datetime.now(timezone.utc).timestamp())

    class Access:
        def __init__(self, record_id: str, capability: str, actor: str):
            self.record_id = record_id
            self.capability = capability
            self.actor = actor

    def access_for(
        record_id: str,
        token: str | None,
        clinician_key: str | None,
        clinician_id: str | None,
    ) -> Access:
        if clinician_key is not None:
            if clinician_key != gateway.config.clinician_key:
                raise HTTPException(status_code=401, detail="bad_clinician_key")
            return Access(record_id, "read_write", f"clinician:{clinician_id or 'console'}")
        if token:
            try:
                grant = rp.verify_token(
                    token,
                    gateway.config.signing_key,
                    now=_epoch_now(),
                    revoked=rp.revoked_grants(gateway.store.log(record_id)),
                )
            except rp.TokenRejected as exc:
                raise HTTPException(status_code=401, detail=exc.reason) from None
            if grant.record_id != record_id:
                raise HTTPException(status_code=401, detail="bad_mac")
            return Access(record_id, grant.capability, f"clinician:token-{grant.nonce[:8]}")
        raise HTTPException(status_code=401, detail="missing_credentials")

    def auth(
        record_id: str,
        token: str | None = Query(default=None),
        authorization: str | None = Header(default=None),
        x_clinician_key: str | None = Header(default=None),
        x_clinician_id: str | None = Header(default=None),
    ) -> Access:
        bearer = None
        if authorization and authorization.lower().startswith("bearer "):
            bearer = authorization[7:]
        return access_for(record_id, token or bearer, x_clinician_key, x_clinician_id)

    def require_write(access: Access) -> None:
        if access.capability != "read_write":
            raise HTTPException(status_code=401, detail="read_only_capability")

    def known_record(record_id: str) -> None:
        if record_id not in gateway.store.record_ids():
            raise HTTPException(status_code=404, detail="unknown_record")

    @app.post("/channel/inbound")
    @app.post("/sim/inbound")
    async def inbound(body: InboundBody):
        message = InboundMessage(
            message_id=body.message_id,
            sender_ref=body.sender_ref,
            kind=body.kind,
            channel_timestamp=body.channel_timestamp or _now_iso(),
            body=body.body,
            media_ref=body.media_ref,
        )
        replies = gateway.handle_inbound(message)
        record_id = gateway.store.sender_record(body.sender_ref)
        version = gateway.record_state(record_id).record.version if record_id else 0
        return {
            "replies": [r.to_dict() for r in replies],
            "record_id": record_id,
            "record_version": version,
        }

    @app.post("/console/redeem")
    async def redeem(body: RedeemBody):
        try:
            grant = rp.verify_token(body.token, gateway.config.signing_key, now=_epoch_now())
        except rp.TokenRejected as exc:
            raise HTTPException(status_code=401, detail=exc.reason) from None
        known_record(grant.record_id)
        log = gateway.store.log(grant.record_id)
        try:
            grant, audit = rp.redeem_token(
                body.token, gateway.config.site_id, _epoch_now(), gateway.config.signing_key, log
            )
        except rp.TokenRejected as exc:
            raise HTTPException(status_code=401, detail=exc.reason) from None
        gateway.store.append_event(grant.record_id, "system", _now_iso(), audit)
        state = gateway.record_state(grant.record_id)
        return {
            "record_id": grant.record_id,
            "capability": grant.capability,
            "expiry": grant.expiry,
            "record_version": state.record.version,
        }

    @app.get("/console/records/{record_id}")
    async def get_record(record_id: str, access: Access = Depends(auth)):
        known_record(record_id)
        state = gateway.record_state(record_id)
        return {
            "record": record_to_dict(state.record),
            "record_version": state.record.version,
            "capability": access.capability,
        }

    @app.get("/console/records/{record_id}/events")
    async def get_events(record_id: str, access: Access = Depends(auth)):
        known_record(record_id)
        log = gateway.store.log(record_id)
        state = gateway.record_state(record_id)
        return {
            "events": [
                {
                    "event_id": e.event_id,
                    "site_id": e.site_id,
                    "actor": e.actor,
                    "lclock": e.lclock,
                    "wall_time": e.wall_time,
                    "payload": e.payload,
                }
                for e in log.canonical()
            ],
            "record_version": state.record.version,
        }

    @app.get("/console/records/{record_id}/alerts")
    async def get_alerts(record_id: str, access: Access = Depends(auth)):
        known_record(record_id)
        state = gateway.record_state(record_id)
        alerts = []
        for alert_payload in state.alerts.values():
            alert = alert_rules.Alert.from_payload(alert_payload)
            rule = gateway.rules_by_id.get(alert.rule_id)
            alerts.append(
                {
                    **alert_payload,
                    "severity": rule.severity if rule else None,
                    "rule_name": rule.name if rule else alert.rule_id,
                    "clinician_text": alert_rules.render(alert, rule, state.record, "clinician", "en")
                    if rule
                    else "",
                    "patient_text": alert_rules.render(
                        alert, rule, state.record, "patient", gateway.config.language
                    )
                    if rule
                    else "",
                }
            )
        alerts.sort(key=lambda a: (a["fired_at"], a["alert_id"]))
        return {"alerts": alerts, "record_version": state.record.version}

    @app.post("/console/records/{record_id}/verify")
    async def post_field_verify(record_id: str, body: VerifyBody, access: Access = Depends(auth)):
        known_record(record_id)
        require_write(access)
        state = gateway.record_state(record_id)
        if body.path not in state.record.provenance:
            raise HTTPException(status_code=404, detail="unpopulated_path")
        gateway.store.append_event(
            record_id,
            access.actor,
            _now_iso(),
            {"kind": "field_verify", "path": body.path, "clinician": access.actor},
        )
        state = gateway.record_state(record_id)
        return {"ok": True, "record_version": state.record.version}

    @app.post("/console/records/{record_id}/alerts/{alert_id}/status")
    async def post_alert_status(
        record_id: str, alert_id: str, body: StatusBody, access: Access = Depends(auth)
    ):
        known_record(record_id)
        require_write(access)
        if body.status not in alert_rules.ALERT_STATUSES:
            raise HTTPException(status_code=422, detail="unknown_status")
        state = gateway.record_state(record_id)
        if alert_id not in state.alerts:
            raise HTTPException(status_code=404, detail="unknown_alert")
        gateway.store.append_event(
            record_id,
            access.actor,
            _now_iso(),
            {"kind": "alert_status", "alert_id": alert_id, "status": body.status},
        )
        state = gateway.record_state(record_id)
        return {"ok": True, "record_version": state.record.version}

    @app.post("/console/records/{record_id}/alerts/{alert_id}/review")
    async def post_alert_review(
        record_id: str, alert_id: str, body: ReviewBody, access: Access = Depends(auth)
    ):
        known_record(record_id)
        require_write(access)
        state = gateway.record_state(record_id)
        alert = state.alerts.get(alert_id)
        if alert is None:
            raise HTTPException(status_code=404, detail="unknown_alert")
        if alert.get("review") is not None:
            raise HTTPException(status_code=409, detail="already_reviewed")
        gateway.store.append_event(
            record_id,
            access.actor,
            _now_iso(),
            {
                "kind": "alert_review",
                "alert_id": alert_id,
                "accurate": body.accurate,
                "relevant": body.relevant,
                "reviewer": body.reviewer,
                "timestamp": _now_iso(),
            },
        )
        state = gateway.record_state(record_id)
        return {"ok": True, "record_version": state.record.version}

    if static_dir and Path(static_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(static_dir), html=True), name="console")

    return app
