"""Command-line entry point: serve, run-transcript, export-record, issue-token."""

from __future__ import annotations

import argparse
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from .. import alert_rules, companion_content, interview_flow, utterance_parse
from .core import Gateway, GatewayConfig
from .store import Store
from .transcript import run_transcript


def _load_key(args) -> bytes:
    key_path = args.signing_key or os.environ.get("ANCASSIST_SIGNING_KEY_FILE")
    if key_path:
        return Path(key_path).read_bytes().strip()
    return GatewayConfig.signing_key


def build_gateway(args, data_dir: str | None) -> Gateway:
    config = GatewayConfig(site_id=args.site_id, signing_key=_load_key(args))
    if getattr(args, "clinician_key", None):
        config.clinician_key = args.clinician_key
    store = Store(data_dir=data_dir, site_id=args.site_id)
    flow = interview_flow.load_flow(Path(args.flow).read_text("utf-8")) if args.flow else None
    rules = alert_rules.load_rules(Path(args.rules).read_text("utf-8")) if args.rules else None
    lexicon = None
    if args.lexicon:
        import json

        folding = (
            json.loads(Path(args.folding).read_text("utf-8"))["replacements"]
            if args.folding
            else utterance_parse.default_folding()
        )
        lexicon = utterance_parse.load_lexicon(
            json.loads(Path(args.lexicon).read_text("utf-8")), folding
        )
    content = (
        companion_content.load_content(Path(args.content).read_text("utf-8"))
        if args.content
        else None
    )
    return Gateway(store=store, config=config, flow=flow, rules=rules, lexicon=lexicon, content=content)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ancassist", description="Conversational antenatal EMR gateway")
    parser.add_argument("--site-id", default="desk")
    parser.add_argument("--signing-key", help="path to the shared signing key file")
    parser.add_argument("--flow", help="flow document path (default: packaged anc_v1)")
    parser.add_argument("--rules", help="rules document path (default: packaged anc_v1)")
    parser.add_argument("--lexicon", help="lexicon path (default: packaged)")
    parser.add_argument("--folding", help="folding table path (default: packaged)")
    parser.add_argument("--content", help="content corpus path (default: packaged)")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the HTTP gateway")
    serve.add_argument("--listen", default="127.0.0.1:8000")
    serve.add_argument("--data-dir", default="./data")
    serve.add_argument("--static-dir", help="directory of built console assets to serve at /ui")
    serve.add_argument("--clinician-key", help="shared clinician credential")

    run = sub.add_parser("run-transcript", help="replay a transcript deterministically")
    run.add_argument("transcript", help="transcript file (ndjson inbound messages)")
    run.add_argument("--out-record", help="write canonical record(s) here")
    run.add_argument("--out-outbound", help="write outbound log here")

    export = sub.add_parser("export-record", help="print a record's canonical serialization")
    export.add_argument("record_id")
    export.add_argument("--data-dir", default="./data")

    issue = sub.add_parser("issue-token", help="issue a share token for a record")
    issue.add_argument("record_id")
    issue.add_argument("--cap", choices=["read", "read_write"], default="read")
    issue.add_argument("--ttl", type=int, default=72 * 3600, help="seconds")
    issue.add_argument("--data-dir", default="./data")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)

    if args.command == "serve":
        import uvicorn

        from .api import create_app

        gateway = build_gateway(args, args.data_dir)
        app = create_app(gateway, static_dir=args.static_dir)
        host, _, port = args.listen.partition(":")
        uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8000), log_level="warning")
        return 0

    if args.command == "run-transcript":
        gateway = build_gateway(args, None)
        result = run_transcript(gateway, Path(args.transcript).read_text("utf-8"))
        if args.out_record:
            Path(args.out_record).write_text(result.records_text(), "utf-8")
        if args.out_outbound:
            Path(args.out_outbound).write_text(result.outbound_text(), "utf-8")
        if not args.out_record and not args.out_outbound:
            sys.stdout.write(result.records_text())
            sys.stdout.write(result.outbound_text())
        return 0

    if args.command == "export-record":
        gateway = build_gateway(args, args.data_dir)
        sys.stdout.write(gateway.export_record(args.record_id))
        return 0

    if args.command == "issue-token":
        gateway = build_gateway(args, args.data_dir)
        now = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S")
        token = gateway.issue_share_token(args.record_id, args.cap, args.ttl, now)
        print(token)
        return 0

    return 1


if __name__ == "__main__":
    raise SystemExit(main())
