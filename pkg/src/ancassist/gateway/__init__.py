from .core import Gateway, GatewayConfig, InboundMessage, OutboundMessage, RoutingDecision
from .store import Store
from .transcript import TranscriptResult, parse_transcript, run_transcript

__all__ = [
    "Gateway",
    "GatewayConfig",
    "InboundMessage",
    "OutboundMessage",
    "RoutingDecision",
    "Store",
    "TranscriptResult",
    "parse_transcript",
    "run_transcript",
]
