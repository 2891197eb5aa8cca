"""Channels, packets, and the peer-facing network interface.

A channel is a unidirectional link between two topology neighbors.  Packets
carry a sampled delivery delay of at least one round; FIFO channels clamp
delivery times so send order is never inverted, non-FIFO channels deliver
in delivery-round order with ties shuffled (this is what "reorder" means
here).  Duplication enqueues an independent second copy with its own delay,
so a duplicate may overtake the original on non-FIFO channels.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from typing import Any, Callable, Optional

from .config import ChannelSpec
from .eventlog import LogRecord


@dataclass
class Packet:
    source: int
    destination: int
    payload: Any
    send_round: int
    delivery_round: int
    seq: int = 0  # per-channel send counter, preserves FIFO order


@dataclass
class ChannelStats:
    sent: int = 0
    dropped: int = 0
    duplicated: int = 0
    delivered: int = 0

    def to_doc(self) -> dict[str, int]:
        return {"sent": self.sent, "dropped": self.dropped,
                "duplicated": self.duplicated, "delivered": self.delivered}


def sample_delay(spec: ChannelSpec, rng) -> int:
    """Whole-round delay >= 1 drawn per the channel's discipline."""
    if spec.delay_kind == "deterministic":
        return int(spec.delay_param)
    if spec.delay_kind == "uniform":
        return rng.randint(1, int(spec.delay_param))
    return 1 + _poisson(spec.delay_param - 1.0, rng)


def _poisson(mean: float, rng) -> int:
    """Knuth's method, chunked so large means stay in float range."""
    if mean <= 0.0:
        return 0
    count = 0
    remaining = mean
    product = rng.random()
    while remaining > 0.0:
        step = min(remaining, 500.0)
        threshold = math.exp(-step)
        remaining -= step
        while product > threshold:
            count += 1
            product *= rng.random()
        if remaining > 0.0:
            product /= threshold
    return count


class Channel:
    """State of one directed link, mutated only by the engine."""

    def __init__(self, src: int, dst: int, spec: ChannelSpec, rng, order_rng):
        self.src = src
        self.dst = dst
        self.spec = spec
        self.rng = rng                # drop / delay / duplicate draws
        self.order_rng = order_rng    # non-FIFO tie shuffles
        self.in_transit: list[Packet] = []
        self.last_scheduled_delivery = 0
        self.stats = ChannelStats()
        self._send_seq = 0

    def enqueue(self, payload: Any, current_round: int,
                log: Optional[Callable[[LogRecord], None]] = None) -> None:
        self.stats.sent += 1
        if self.spec.drop_probability > 0 and self.rng.random() < self.spec.drop_probability:
            self.stats.dropped += 1
            if log is not None:
                log(LogRecord("debug", "drop", 0, current_round, None,
                              {"src": self.src, "dst": self.dst}))
            return
        self._admit(payload, current_round)
        if (self.spec.duplicate_probability > 0
                and self.rng.random() < self.spec.duplicate_probability):
            self.stats.duplicated += 1
            self._admit(payload, current_round)

    def _admit(self, payload: Any, current_round: int) -> None:
        delay = sample_delay(self.spec, self.rng)
        delivery = current_round + delay
        if self.spec.fifo:
            delivery = max(delivery, self.last_scheduled_delivery)
            self.last_scheduled_delivery = delivery
        self.in_transit.append(Packet(self.src, self.dst, payload,
                                      current_round, delivery, self._send_seq))
        self._send_seq += 1

    def collect_deliverable(self, current_round: int) -> list[Packet]:
        """Remove and return all packets due this round, in delivery order."""
        if not self.in_transit:
            return []
        due = [p for p in self.in_transit if p.delivery_round <= current_round]
        if not due:
            return []
        self.in_transit = [p for p in self.in_transit if p.delivery_round > current_round]
        if self.spec.fifo:
            due.sort(key=lambda p: p.seq)
        else:
            due.sort(key=lambda p: p.delivery_round)
            due = self._shuffle_ties(due)
        self.stats.delivered += len(due)
        return due

    def _shuffle_ties(self, due: list[Packet]) -> list[Packet]:
        if not self.spec.reorder_enabled:
            return due
        out: list[Packet] = []
        i = 0
        while i < len(due):
            j = i
            while j < len(due) and due[j].delivery_round == due[i].delivery_round:
                j += 1
            group = due[i:j]
            if len(group) > 1:
                self.order_rng.shuffle(group)
            out.extend(group)
            i = j
        return out


class NodeInterface:
    """One peer's window onto the network.

    Sends are staged into a private outbox during the compute phase; the
    engine merges outboxes into channels afterwards, so nothing sent in a
    round can be received in the same round.  Send and receive fault hooks
    are consulted here; a hook that reports the action handled suppresses
    the correct behavior, and anything the hook itself sends bypasses
    further interception.
    """

    def __init__(self, peer_id: int, neighbors: list[int], emit, test_index: int):
        self.peer_id = peer_id
        self.neighbors = sorted(neighbors)
        self._neighbor_set = set(neighbors)
        self._emit = emit
        self.test_index = test_index
        self.round = 0
        self.outbox: list[tuple[int, Any]] = []
        self.fault = None
        self._inbox: list[tuple[int, Any]] = []
        self._inbox_taken = False
        self._in_hook = False

    # -- engine side -------------------------------------------------------

    def begin_round(self, round_no: int, inbox: list[tuple[int, Any]]) -> None:
        self.round = round_no
        self._inbox = inbox
        self._inbox_taken = False
        self.outbox = []

    def drain_outbox(self) -> list[tuple[int, Any]]:
        staged, self.outbox = self.outbox, []
        return staged

    # -- peer side ---------------------------------------------------------

    def unicast(self, dst: int, msg: Any) -> None:
        self._send(msg, [dst])

    def multicast(self, targets, msg: Any) -> None:
        targets = sorted(set(targets))
        if not targets:
            return
        self._send(msg, targets)

    def broadcast(self, msg: Any) -> None:
        self._send(msg, list(self.neighbors))

    def receive_all(self) -> list[tuple[int, Any]]:
        """This round's deliveries as (source, message) pairs, once."""
        if self._inbox_taken:
            return []
        self._inbox_taken = True
        delivered = []
        for src, payload in self._inbox:
            if self.fault is not None and not self._in_hook:
                self._in_hook = True
                try:
                    handled = self.fault.on_receive(self._peer_ref, payload)
                except Exception as exc:
                    handled = False
                    self.log("error", "fault-hook-error", {"hook": "receive", "error": repr(exc)})
                finally:
                    self._in_hook = False
                if handled:
                    continue
            delivered.append((src, copy.deepcopy(payload)))
        return delivered

    def log(self, level: str, tag: str, payload: dict[str, Any]) -> None:
        self._emit(LogRecord(level, tag, self.test_index, self.round,
                             self.peer_id, payload))

    # -- internals ---------------------------------------------------------

    _peer_ref = None  # set by the engine when the peer is bound

    def bind_peer(self, peer) -> None:
        self._peer_ref = peer

    def _send(self, msg: Any, targets: list[int]) -> None:
        if self.fault is not None and not self._in_hook:
            self._in_hook = True
            try:
                from .faults import apply_send_hooks

                handled = apply_send_hooks(self.fault, self._peer_ref, msg, targets, self)
            finally:
                self._in_hook = False
            if handled:
                return
        self._stage(msg, targets)

    def _stage(self, msg: Any, targets) -> None:
        for dst in targets:
            if dst not in self._neighbor_set:
                self.log("error", "routing-error",
                         {"dst": dst, "reason": "not a topology neighbor"})
                continue
            self.outbox.append((dst, msg))
