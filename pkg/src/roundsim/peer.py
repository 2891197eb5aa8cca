"""The contract every simulated algorithm peer implements.

A peer owns only its private state, its RNG stream, and its network
interface; it is initialized once per test and stepped exactly once per
round.  The same objects run unchanged in abstract and concrete mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

from .network import NodeInterface


@dataclass
class InitContext:
    peer_id: int
    peer_count: int
    neighbors: list[int]
    algo_params: dict[str, Any]
    rounds_per_test: int
    extras: dict[str, Any] = field(default_factory=dict)


class Peer:
    """Base class: override initialize / run_round / collect_metrics."""

    def __init__(self, peer_id: int):
        self.id = peer_id
        self.iface: Optional[NodeInterface] = None
        self.rng = None

    def initialize(self, ctx: InitContext, rng) -> None:
        self.rng = rng

    def run_round(self, round_no: int, iface: NodeInterface) -> None:
        raise NotImplementedError

    def collect_metrics(self) -> dict[str, float]:
        return {}

    def snapshot(self) -> dict[str, Any]:
        """JSON-able private-state digest input; used by determinism oracles."""
        return {}

    # Dispatch helper shared by the built-in algorithms: route messages by
    # their "kind" discriminator to on_<kind> methods, warn on unknown kinds.
    def dispatch(self, messages, iface: NodeInterface, round_no: int) -> None:
        for src, msg in messages:
            kind = msg.get("kind") if isinstance(msg, dict) else None
            handler = getattr(self, f"on_{kind}", None) if kind else None
            if handler is None:
                iface.log("warning", "unknown-kind", {"from": src, "kind": kind})
                continue
            handler(src, msg, iface, round_no)


def run_peer_round(peer: Peer, round_no: int, iface: NodeInterface, fault=None) -> bool:
    """Run one peer's compute step, mediated by its fault's compute hook.

    Returns True when the peer's own handler ran, False when a fault
    substituted it.  Handler errors are logged and survive to next round.
    """
    iface.fault = fault
    iface.bind_peer(peer)
    if fault is not None:
        try:
            handled = fault.on_compute(peer, round_no)
        except Exception as exc:
            handled = False
            iface.log("error", "fault-hook-error", {"hook": "compute", "error": repr(exc)})
        if handled:
            return False
    try:
        peer.run_round(round_no, iface)
    except Exception as exc:
        iface.log("error", "peer-error", {"error": repr(exc)})
    return True
