"""Chord and Kademlia routing over static memberships.

Peer ids are dense 0..n-1; queries target existing ids.  Chord peers hold
ring neighbors plus clockwise power-of-two shortcuts, and because channels
are symmetric a peer can route through the mirror-image links too, so the
greedy "shortest remaining ring distance" rule descends in both directions.
Kademlia peers hold one randomly chosen contact per prefix group and
forward along minimal XOR distance; every successful hop extends the
shared prefix with the target by at least one bit.
"""

from __future__ import annotations

import math
from typing import Any, Optional

from ..config import ValidationError
from ..peer import InitContext, Peer
from ..seeds import make_rng


def id_width(n: int) -> int:
    return max(1, math.ceil(math.log2(n)))


def ring_distance(a: int, b: int, n: int) -> int:
    d = (a - b) % n
    return min(d, n - d)


def build_chord_adjacency(n: int) -> dict[int, list[int]]:
    adj: dict[int, set[int]] = {i: set() for i in range(n)}
    for i in range(n):
        for nb in ((i - 1) % n, (i + 1) % n):
            if nb != i:
                adj[i].add(nb)
                adj[nb].add(i)
        for k in range(id_width(n)):
            target = (i + (1 << k)) % n
            if target != i:
                adj[i].add(target)
                adj[target].add(i)
    return {i: sorted(adj[i]) for i in range(n)}


def build_kademlia_links(cfg, test_index: int) -> dict[int, dict[int, int]]:
    """For each peer, one uniformly chosen member per nonempty prefix group.

    The group for prefix length l is the contiguous id range sharing the
    first l bits and flipping bit l, which keeps this O(n log n).
    """
    n = cfg.peer_count
    w = cfg.algo_params.get("idWidth") or id_width(n)
    links: dict[int, dict[int, int]] = {}
    for p in range(n):
        rng = make_rng(cfg.base_seed, test_index, "peer", (p, "links"))
        chosen: dict[int, int] = {}
        for level in range(w):
            bit = w - 1 - level
            lo = ((p >> bit) ^ 1) << bit
            hi = min(lo + (1 << bit), n)
            if lo < hi:
                chosen[level] = rng.randrange(lo, hi)
        links[p] = chosen
    return links


def kademlia_adjacency(links: dict[int, dict[int, int]], n: int) -> dict[int, list[int]]:
    adj: dict[int, set[int]] = {i: set() for i in range(n)}
    for p, chosen in links.items():
        for q in chosen.values():
            adj[p].add(q)
            adj[q].add(p)
    return {i: sorted(adj[i]) for i in range(n)}


def make_queries(cfg, test_index: int) -> list[tuple[int, int, int]]:
    rng = make_rng(cfg.base_seed, test_index, "engine", "queries")
    n = cfg.peer_count
    count = cfg.algo_params["queryCount"]
    return [(qid, rng.randrange(n), rng.randrange(n)) for qid in range(count)]


class DhtPeer(Peer):
    """Common query plumbing; subclasses provide next_hop."""

    def __init__(self, peer_id: int):
        super().__init__(peer_id)
        self.n = 0
        self.queries: list[tuple[int, int]] = []  # (qid, target) originating here
        self.resolved_count = 0
        self.hops_sum = 0
        self.max_hops = 0

    def initialize(self, ctx: InitContext, rng) -> None:
        super().initialize(ctx, rng)
        self.n = ctx.peer_count
        self.queries = ctx.extras.get("queries", [])
        self.neighbors = list(ctx.neighbors)

    def next_hop(self, target: int) -> Optional[int]:
        raise NotImplementedError

    def _resolve(self, iface, qid: int, hops: int, round_no: int) -> None:
        self.resolved_count += 1
        self.hops_sum += hops
        self.max_hops = max(self.max_hops, hops)
        iface.log("info", "resolved", {"qid": qid, "hops": hops})

    def _route(self, iface, qid: int, target: int, hops: int, round_no: int) -> None:
        if target == self.id:
            self._resolve(iface, qid, hops, round_no)
            return
        nxt = self.next_hop(target)
        if nxt is None:
            iface.log("error", "routing-failure", {"qid": qid, "target": target})
            return
        iface.unicast(nxt, {"kind": "query", "qid": qid, "target": target,
                            "hops": hops + 1})

    def run_round(self, round_no: int, iface) -> None:
        for src, msg in iface.receive_all():
            if isinstance(msg, dict) and msg.get("kind") == "query":
                self._route(iface, msg["qid"], msg["target"], msg["hops"], round_no)
            else:
                iface.log("warning", "unknown-kind", {"from": src})
        if round_no == 0:
            for qid, target in self.queries:
                self._route(iface, qid, target, 0, round_no)

    def collect_metrics(self) -> dict[str, float]:
        return {"resolved": float(self.resolved_count),
                "hops": float(self.hops_sum),
                "maxHops": float(self.max_hops)}

    def snapshot(self) -> dict[str, Any]:
        return {"resolved": self.resolved_count, "hops": self.hops_sum}


class ChordPeer(DhtPeer):
    def next_hop(self, target: int) -> Optional[int]:
        best = None
        best_dist = ring_distance(self.id, target, self.n)
        for nb in self.neighbors:  # ascending, so ties keep the smaller id
            d = ring_distance(nb, target, self.n)
            if d < best_dist:
                best, best_dist = nb, d
        return best


class KademliaPeer(DhtPeer):
    def __init__(self, peer_id: int):
        super().__init__(peer_id)
        self.links: dict[int, int] = {}

    def initialize(self, ctx: InitContext, rng) -> None:
        super().initialize(ctx, rng)
        self.links = ctx.extras.get("links", {})

    def next_hop(self, target: int) -> Optional[int]:
        own = self.id ^ target
        best = None
        best_xor = own
        for q in self.links.values():
            x = q ^ target
            if x < best_xor or (x == best_xor and best is not None and q < best):
                best, best_xor = q, x
        return best  # None when no link improves the prefix


class DhtFamily:
    def __init__(self, protocol: str):
        self.protocol = protocol

    def defaults(self, peer_count: int) -> dict[str, Any]:
        return {"queryCount": 100}

    def validate(self, cfg) -> None:
        params = cfg.algo_params
        if params.get("queryCount", 100) < 0:
            raise ValidationError("algoParams.queryCount must be >= 0")
        width = params.get("idWidth")
        if width is not None and width < id_width(cfg.peer_count):
            raise ValidationError("algoParams.idWidth too small for peerCount")

    def channel_override(self, params):
        return None

    def equivocation(self) -> dict[str, Any]:
        return {"kinds": [], "field": "target"}

    def make_peers(self, cfg, ids):
        cls = ChordPeer if self.protocol == "chord" else KademliaPeer
        return {pid: cls(pid) for pid in ids}

    def topology(self, cfg, test_index):
        if self.protocol == "chord":
            return build_chord_adjacency(cfg.peer_count)
        links = build_kademlia_links(cfg, test_index)
        return kademlia_adjacency(links, cfg.peer_count)

    def extras(self, cfg, test_index, adjacency) -> dict[int, dict]:
        by_peer: dict[int, dict] = {}
        for qid, origin, target in make_queries(cfg, test_index):
            by_peer.setdefault(origin, {}).setdefault("queries", []).append((qid, target))
        if self.protocol == "kademlia":
            for pid, chosen in build_kademlia_links(cfg, test_index).items():
                by_peer.setdefault(pid, {})["links"] = chosen
        return by_peer

    def finalize(self, cfg, per_peer, channel_stats) -> dict[str, float]:
        resolved = sum(m["resolved"] for m in per_peer.values())
        hops = sum(m["hops"] for m in per_peer.values())
        max_hops = max((m["maxHops"] for m in per_peer.values()), default=0.0)
        total = float(cfg.algo_params["queryCount"])
        return {
            "resolved": resolved,
            "unresolved": total - resolved,
            "meanHops": hops / resolved if resolved else 0.0,
            "maxHops": max_hops,
        }
