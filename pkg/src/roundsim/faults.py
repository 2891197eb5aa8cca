"""Byzantine fault strategies: four interception hooks plus three built-ins.

A fault object may claim any of a peer's four actions: unicast send,
multicast/broadcast send, receive, and local computation.  A hook returning
True suppresses exactly that one correct action; False changes nothing.
Coalition faults coordinate through ordinary (private) messages rather than
shared memory, so the same strategies work across processes in concrete
mode.
"""

from __future__ import annotations

import copy
from typing import Any, Iterable


class Fault:
    """No-op base; every hook falls through."""

    def on_unicast(self, peer, msg, dst) -> bool:
        return False

    def on_multicast(self, peer, msg, targets) -> bool:
        return False

    def on_receive(self, peer, msg) -> bool:
        return False

    def on_compute(self, peer, round_no) -> bool:
        return False


def apply_send_hooks(fault: Fault, peer, msg, targets: list[int], iface) -> bool:
    """Dispatch a staged send to the fault: one target routes to the unicast
    hook, several to the multicast hook.  A hook that raises is treated as
    not-handled so the correct send still goes out."""
    try:
        if len(targets) == 1:
            return fault.on_unicast(peer, msg, targets[0])
        return fault.on_multicast(peer, msg, targets)
    except Exception as exc:
        iface.log("error", "fault-hook-error", {"hook": "send", "error": repr(exc)})
        return False


class CrashFault(Fault):
    """Total silence over [crashRound, recoverRound); state survives."""

    def __init__(self, crash_round: int = 0, recover_round=None):
        self.crash_round = crash_round
        self.recover_round = recover_round
        self._round = -1

    def active(self, round_no: int) -> bool:
        if round_no < self.crash_round:
            return False
        return self.recover_round is None or round_no < self.recover_round

    def on_compute(self, peer, round_no) -> bool:
        self._round = round_no
        return self.active(round_no)

    def on_unicast(self, peer, msg, dst) -> bool:
        return self.active(self._round)

    def on_multicast(self, peer, msg, targets) -> bool:
        return self.active(self._round)

    def on_receive(self, peer, msg) -> bool:
        return self.active(self._round)


def invert_value(value):
    if isinstance(value, bool):
        return not value
    if isinstance(value, int):
        return -value - 1
    if isinstance(value, float):
        return -value - 1.0
    if isinstance(value, str):
        return value[1:] if value.startswith("!") else "!" + value
    return value


class EquivocateFault(Fault):
    """Splits registered multicasts: first half of the ascending target set
    gets the message unchanged, the second half a copy with the registered
    field inverted."""

    def __init__(self, kinds: Iterable[str], field: str):
        self.kinds = frozenset(kinds)
        self.field = field

    def _applies(self, msg) -> bool:
        return (isinstance(msg, dict) and msg.get("kind") in self.kinds
                and self.field in msg)

    def on_multicast(self, peer, msg, targets) -> bool:
        if not self._applies(msg):
            return False
        ordered = sorted(targets)
        iface = peer.iface
        if len(ordered) < 2:
            iface.multicast(ordered, msg)
            return True
        mid = len(ordered) // 2
        first, second = ordered[:mid], ordered[mid:]
        iface.multicast(first, msg)
        alt = copy.deepcopy(msg)
        alt[self.field] = invert_value(alt[self.field])
        iface.multicast(second, alt)
        return True


class ParasiteFault(Fault):
    """Selfish proof-of-work coalition: withhold freshly mined blocks,
    exchange them privately inside the coalition, and broadcast the whole
    hidden branch once the public chain has advanced by
    ``public_block_threshold`` past the fork point while the hidden branch
    leads the public one by ``lead_threshold``.

    The mining peer's own round runs untouched; since its local tree
    contains the withheld blocks, its ordinary tip selection keeps it on
    the private branch exactly as long as the protocol rule prefers that
    branch, and re-forks from the public tip after a losing race.  Only the
    announcement of a fresh block is intercepted.
    """

    def __init__(self, coalition: Iterable[int], public_block_threshold: int = 2,
                 lead_threshold: int = 1):
        self.coalition = tuple(sorted(coalition))
        self.public_block_threshold = public_block_threshold
        self.lead_threshold = lead_threshold
        self.private_ids: set[int] = set()   # every unreleased id, abandoned included
        self.branch_ids: set[int] = set()    # ids on the branch rooted at the base
        self.withheld: list[dict] = []       # this member's view of that branch
        self.base = None                     # fork point (a public block id)

    # -- hooks -----------------------------------------------------------------

    def on_receive(self, peer, msg) -> bool:
        if not (hasattr(peer, "tree") and isinstance(msg, dict)
                and msg.get("kind") == "block"):
            return False
        block = msg["block"]
        bid = block["id"]
        self._ensure_base(peer)
        peer.tree.integrate(block)  # idempotent; the peer integrates it again
        if msg.get("private"):
            if bid not in self.private_ids:
                self.private_ids.add(bid)
                self.branch_ids.add(bid)
                self.withheld.append(block)
        elif bid in self.private_ids:
            # A coalition partner already released this block.
            self.private_ids.discard(bid)
            self.branch_ids.discard(bid)
            self.withheld = [b for b in self.withheld if b["id"] != bid]
            if peer.tree.heights[bid] > peer.tree.heights[self.base]:
                self.base = bid
            if not self.withheld:
                self.branch_ids.clear()
        self._evaluate(peer)
        return False

    def on_multicast(self, peer, msg, targets) -> bool:
        if not (hasattr(peer, "tree") and isinstance(msg, dict)
                and msg.get("kind") == "block" and not msg.get("private")):
            return False
        block = msg["block"]
        if block.get("miner") != peer.id or block["id"] in self.private_ids:
            return False
        self._ensure_base(peer)
        parent = block["parent"]
        if parent != self.base and parent not in self.branch_ids:
            # The protocol rule moved off the hidden branch: fork afresh from
            # the public block this one extends.  Old ids stay unreleased.
            self.base = parent
            self.branch_ids = set()
            self.withheld = []
        block["parasite"] = True
        self.private_ids.add(block["id"])
        self.branch_ids.add(block["id"])
        self.withheld.append(block)
        others = [p for p in self.coalition
                  if p != peer.id and p in peer.iface.neighbors]
        peer.iface.multicast(others, {"kind": "block", "block": block, "private": True})
        self._evaluate(peer)
        return True

    def on_unicast(self, peer, msg, dst) -> bool:
        return self.on_multicast(peer, msg, [dst])

    # -- internals ---------------------------------------------------------------

    def _ensure_base(self, peer) -> None:
        if self.base is None or self.base not in peer.tree.blocks:
            self.base = peer.tree.genesis_id

    def _branch_tip(self, peer) -> int:
        tree = peer.tree
        base_h = tree.heights[self.base]
        best_h, best_id = base_h, self.base
        for bid in self.branch_ids:
            if bid not in tree.blocks or not tree.descends_from(bid, self.base):
                continue
            h = tree.heights[bid]
            if h > best_h or (h == best_h and bid < best_id):
                best_h, best_id = h, bid
        return best_id

    def _evaluate(self, peer) -> None:
        if not self.withheld:
            return
        tree = peer.tree
        exclude = frozenset(self.private_ids)
        branch_score, public_score, public_h = peer.race_scores(
            self.base, self.branch_ids, exclude)
        base_h = tree.heights[self.base]
        if public_score > branch_score:
            # Losing race: the public chain passed the hidden branch.
            # Abandon and re-fork from the current public tip.
            peer.iface.log("debug", "parasite-abandon",
                           {"blocks": len(self.withheld),
                            "behind": public_score - branch_score})
            self.withheld = []
            self.branch_ids = set()
            self.base = peer.select_tip(exclude=exclude)
            return
        if (public_h - base_h >= self.public_block_threshold
                and branch_score - public_score >= self.lead_threshold):
            released = sorted(self.withheld, key=lambda b: tree.heights[b["id"]])
            tip = released[-1]["id"]
            # Referenced private uncles ship with the branch so every view
            # counts the same weight afterwards.
            extra = []
            for block in released:
                for uncle in block.get("uncles", ()):
                    if uncle in self.private_ids and uncle in tree.blocks:
                        extra.append(tree.blocks[uncle])
            for block in sorted(extra, key=lambda b: (tree.heights[b["id"]], b["id"])):
                self.private_ids.discard(block["id"])
                self.branch_ids.discard(block["id"])
                peer.iface.broadcast({"kind": "block", "block": block})
            for block in released:
                self.private_ids.discard(block["id"])
                peer.iface.broadcast({"kind": "block", "block": block})
            peer.iface.log("info", "parasite-release",
                           {"blocks": len(released) + len(extra), "tip": tip})
            self.withheld = []
            self.branch_ids = set()
            self.base = tip


def build_fault(resolved, peer_id: int, algorithm: str, algo_params: dict[str, Any]) -> Fault:
    """Instantiate the fault for one peer from a resolved assignment."""
    from . import algorithms

    params = resolved.params
    if resolved.kind == "crash":
        return CrashFault(params.get("crashRound", 0), params.get("recoverRound"))
    if resolved.kind == "equivocate":
        defaults = algorithms.equivocation_defaults(algorithm)
        kinds = params.get("kinds", defaults.get("kinds", []))
        field = params.get("field", defaults.get("field", "value"))
        return EquivocateFault(kinds, field)
    assert resolved.kind == "parasite"
    pbt = params.get("publicBlockThreshold",
                     algo_params.get("publicBlockThreshold", 2))
    lead = params.get("leadThreshold", algo_params.get("leadThreshold", 1))
    return ParasiteFault(resolved.group, pbt, lead)
