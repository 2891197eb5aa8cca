"""Two-node reliable transmission: alternating-bit over FIFO channels and a
sequence-number data link that stays correct on non-FIFO channels.

Both protocols keep exactly one message outstanding and retransmit after a
fixed timeout; the sender draws payloads from an inexhaustible synthetic
stream.  Utility is delivered data divided by transmitted data (channel
duplicates included, since they consume bandwidth on the wire).
"""

from __future__ import annotations

from typing import Any, Optional

from ..config import ValidationError
from ..peer import InitContext, Peer

SENDER, RECEIVER = 0, 1

# level -> (max delay in rounds, drop probability), exactly as configured
ADVERSITY_LEVELS = {
    1: (1, 0.0),
    2: (2, 0.05),
    3: (3, 0.1),
    4: (4, 0.2),
    5: (5, 0.3),
    6: (6, 0.4),
}

FAULT_MIXES = ("none", "drop", "reorder", "duplicate", "mixed")


class StopAndWaitSender(Peer):
    """Shared core: ABP tags messages with an alternating bit, SDL with an
    unbounded sequence number; the send/timeout loop is identical."""

    def __init__(self, peer_id: int, protocol: str):
        super().__init__(peer_id)
        self.protocol = protocol
        self.tag = 0                      # current bit or sequence number
        self.pending: Optional[int] = None
        self.sent_round = -1
        self.timeout = 3
        self.sent_count = 0
        self.acked_count = 0
        self._next_payload = 0

    def initialize(self, ctx: InitContext, rng) -> None:
        super().initialize(ctx, rng)
        self.timeout = ctx.algo_params["timeoutRounds"]

    def _advance_tag(self) -> None:
        self.tag = self.tag ^ 1 if self.protocol == "abp" else self.tag + 1

    def run_round(self, round_no: int, iface) -> None:
        for src, msg in iface.receive_all():
            if not (isinstance(msg, dict) and msg.get("kind") == "ack"):
                iface.log("warning", "unknown-kind", {"from": src})
                continue
            if self.pending is not None and msg["tag"] == self.tag:
                self.pending = None
                self.acked_count += 1
                self._advance_tag()
        if self.pending is None:
            self.pending = self._next_payload
            self._next_payload += 1
            self._transmit(round_no, iface)
        elif round_no - self.sent_round > self.timeout:
            self._transmit(round_no, iface)

    def _transmit(self, round_no: int, iface) -> None:
        iface.unicast(RECEIVER, {"kind": "data", "tag": self.tag, "payload": self.pending})
        self.sent_count += 1
        self.sent_round = round_no

    def collect_metrics(self) -> dict[str, float]:
        return {"sent": float(self.sent_count), "acked": float(self.acked_count)}

    def snapshot(self) -> dict[str, Any]:
        return {"tag": self.tag, "pending": self.pending, "sent": self.sent_count}


class AbpReceiver(Peer):
    def __init__(self, peer_id: int):
        super().__init__(peer_id)
        self.expected_bit = 0
        self.delivered: list[int] = []

    def run_round(self, round_no: int, iface) -> None:
        for src, msg in iface.receive_all():
            if not (isinstance(msg, dict) and msg.get("kind") == "data"):
                iface.log("warning", "unknown-kind", {"from": src})
                continue
            if msg["tag"] == self.expected_bit:
                self.delivered.append(msg["payload"])
                iface.log("info", "deliver", {"payload": msg["payload"]})
                self.expected_bit ^= 1
            iface.unicast(SENDER, {"kind": "ack", "tag": msg["tag"]})

    def collect_metrics(self) -> dict[str, float]:
        return {"delivered": float(len(self.delivered)),
                "inOrder": float(self.delivered == list(range(len(self.delivered))))}

    def snapshot(self) -> dict[str, Any]:
        return {"expected": self.expected_bit, "delivered": len(self.delivered)}


class SdlReceiver(Peer):
    def __init__(self, peer_id: int):
        super().__init__(peer_id)
        self.expected_seq = 0
        self.delivered: list[int] = []

    def run_round(self, round_no: int, iface) -> None:
        for src, msg in iface.receive_all():
            if not (isinstance(msg, dict) and msg.get("kind") == "data"):
                iface.log("warning", "unknown-kind", {"from": src})
                continue
            seq = msg["tag"]
            if seq == self.expected_seq:
                self.delivered.append(msg["payload"])
                iface.log("info", "deliver", {"payload": msg["payload"]})
                self.expected_seq += 1
            if seq <= self.expected_seq:
                iface.unicast(SENDER, {"kind": "ack", "tag": seq})
            # seq beyond the expected one cannot be acknowledged safely

    def collect_metrics(self) -> dict[str, float]:
        return {"delivered": float(len(self.delivered)),
                "inOrder": float(self.delivered == list(range(len(self.delivered))))}

    def snapshot(self) -> dict[str, Any]:
        return {"expected": self.expected_seq, "delivered": len(self.delivered)}


def utility_metric(sent: float, delivered: float) -> float:
    """Delivered over transmitted, as a percentage; 0 when nothing was sent."""
    if sent <= 0:
        return 0.0
    return 100.0 * delivered / sent


class DatalinkFamily:
    def __init__(self, protocol: str):
        self.protocol = protocol

    def defaults(self, peer_count: int) -> dict[str, Any]:
        return {"timeoutRounds": 3}

    def validate(self, cfg) -> None:
        if cfg.peer_count != 2:
            raise ValidationError(f"{self.protocol} runs on exactly 2 peers")
        params = cfg.algo_params
        if params.get("timeoutRounds", 3) < 1:
            raise ValidationError("algoParams.timeoutRounds must be >= 1")
        level = params.get("adversityLevel")
        if level is not None:
            if level not in ADVERSITY_LEVELS:
                raise ValidationError("algoParams.adversityLevel must be 1..6")
            if params.get("series", "delay") not in ("delay", "drop"):
                raise ValidationError("algoParams.series must be 'delay' or 'drop'")
        mix = params.get("faultMix")
        if mix is not None and mix not in FAULT_MIXES:
            raise ValidationError(f"algoParams.faultMix must be one of {FAULT_MIXES}")

    def channel_override(self, params) -> Optional[dict]:
        level = params.get("adversityLevel")
        if level is not None:
            delay_max, drop = ADVERSITY_LEVELS[level]
            if params.get("series", "delay") == "delay":
                return {"delayKind": "uniform", "delayParam": delay_max,
                        "dropProbability": 0.0, "fifo": True}
            return {"delayKind": "deterministic", "delayParam": 1,
                    "dropProbability": drop, "fifo": True}
        mix = params.get("faultMix")
        if mix is not None:
            # SDL is the non-FIFO protocol; every condition shares the same
            # delay draws so the reorder-only run is the fault-free run plus
            # tie shuffling and nothing else.  The delay cap keeps the
            # fault-free round trip inside the retransmission grace, so
            # exactly one packet is ever in flight and ties cannot arise.
            base = {"delayKind": "uniform", "delayParam": 2, "fifo": False,
                    "dropProbability": 0.0, "duplicateProbability": 0.0,
                    "reorderEnabled": False}
            if mix in ("drop", "mixed"):
                base["dropProbability"] = 0.2
            if mix in ("duplicate", "mixed"):
                base["duplicateProbability"] = 0.3
            if mix in ("reorder", "mixed"):
                base["reorderEnabled"] = True
            return base
        return None

    def equivocation(self) -> dict[str, Any]:
        return {"kinds": [], "field": "tag"}

    def make_peers(self, cfg, ids):
        peers = {}
        for pid in ids:
            if pid == SENDER:
                peers[pid] = StopAndWaitSender(pid, self.protocol)
            else:
                peers[pid] = (AbpReceiver(pid) if self.protocol == "abp"
                              else SdlReceiver(pid))
        return peers

    def topology(self, cfg, test_index):
        return None

    def extras(self, cfg, test_index, adjacency):
        return {}

    def finalize(self, cfg, per_peer, channel_stats) -> dict[str, float]:
        sent = per_peer.get(SENDER, {}).get("sent", 0.0)
        delivered = per_peer.get(RECEIVER, {}).get("delivered", 0.0)
        in_order = per_peer.get(RECEIVER, {}).get("inOrder", 1.0)
        duplicated = 0.0
        stats = channel_stats.get((SENDER, RECEIVER))
        if stats is not None:
            duplicated = float(stats.duplicated)
        transmitted = sent + duplicated
        return {
            "sent": sent,
            "delivered": delivered,
            "transmitted": transmitted,
            "utility": utility_metric(transmitted, delivered),
            "inOrder": in_order,
        }
