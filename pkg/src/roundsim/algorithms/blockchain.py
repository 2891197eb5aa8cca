"""Proof-of-work blockchain peers: longest-chain (bitcoin) and GHOST
subtree-weight (ethereum) tip selection over a shared block-tree core.

Blocks are payload-free; the experiments measure only chain composition.
Mining is a per-round Bernoulli draw scaled by the peer's rate, so a rate-2
miner is twice as likely to find a block per round as a rate-1 miner.
"""

from __future__ import annotations

import hashlib
from typing import Any, Optional

from ..config import ValidationError
from ..peer import InitContext, Peer

GENESIS_ID = 0

# Ethereum-style uncle inclusion: a block may reference a couple of recent
# off-chain blocks, folding their weight into its own branch.
MAX_UNCLES = 2
UNCLE_DEPTH = 7


def block_id(miner: int, round_no: int, counter: int) -> int:
    """Collision-free-in-practice 64-bit id, no coordination needed."""
    h = hashlib.blake2b(digest_size=8, key=b"roundsim.block")
    h.update(miner.to_bytes(8, "big", signed=True))
    h.update(round_no.to_bytes(8, "big", signed=True))
    h.update(counter.to_bytes(8, "big", signed=True))
    value = int.from_bytes(h.digest(), "big")
    return value or 1  # keep 0 reserved for genesis


class BlockTree:
    """One peer's copy of the ledger, rooted at a shared genesis.

    Heights and subtree weights are maintained incrementally; blocks whose
    parent is unknown wait in an orphan buffer until it arrives.  A block's
    own weight is 1 plus its resolvable uncle references, so referenced
    off-chain work counts toward the branch that embedded it.
    """

    def __init__(self):
        genesis = {"id": GENESIS_ID, "parent": None, "miner": -1,
                   "round": -1, "parasite": False}
        self.genesis_id = GENESIS_ID
        self.blocks: dict[int, dict] = {GENESIS_ID: genesis}
        self.children: dict[int, list[int]] = {GENESIS_ID: []}
        self.heights: dict[int, int] = {GENESIS_ID: 0}
        self.weights: dict[int, int] = {GENESIS_ID: 1}
        self.block_weight: dict[int, int] = {GENESIS_ID: 1}
        self.orphans: dict[int, list[dict]] = {}
        self._pending_refs: dict[int, list[int]] = {}  # uncle id -> referencers
        self._best = (0, GENESIS_ID)  # (height, id), ties to smaller id

    def integrate(self, block: dict) -> None:
        bid = block["id"]
        if bid in self.blocks:
            return
        parent = block["parent"]
        if parent not in self.blocks:
            self.orphans.setdefault(parent, []).append(block)
            return
        self._insert(block)
        stack = [bid]
        while stack:
            pid = stack.pop()
            for orphan in self.orphans.pop(pid, ()):
                if orphan["id"] not in self.blocks:
                    self._insert(orphan)
                    stack.append(orphan["id"])

    def _bump(self, start: Optional[int], amount: int) -> None:
        node = start
        while node is not None:
            self.weights[node] += amount
            node = self.blocks[node]["parent"]

    def _insert(self, block: dict) -> None:
        bid = block["id"]
        parent = block["parent"]
        self.blocks[bid] = block
        self.children[bid] = []
        self.children[parent].append(bid)
        height = self.heights[parent] + 1
        self.heights[bid] = height
        own = 1
        for uncle in block.get("uncles", ()):
            if uncle in self.blocks:
                own += 1
            else:
                self._pending_refs.setdefault(uncle, []).append(bid)
        self.block_weight[bid] = own
        self.weights[bid] = own
        self._bump(parent, own)
        for referencer in self._pending_refs.pop(bid, ()):
            if referencer in self.blocks:
                self.block_weight[referencer] += 1
                self._bump(referencer, 1)
        best_h, best_id = self._best
        if height > best_h or (height == best_h and bid < best_id):
            self._best = (height, bid)

    def descends_from(self, bid: int, ancestor: int) -> bool:
        target_h = self.heights[ancestor]
        node = bid
        while node is not None and self.heights[node] > target_h:
            node = self.blocks[node]["parent"]
        return node == ancestor

    def chain_from(self, tip: int) -> list[int]:
        """Block ids from tip down to (excluding) genesis."""
        out = []
        node: Optional[int] = tip
        while node is not None and node != self.genesis_id:
            out.append(node)
            node = self.blocks[node]["parent"]
        return out


def bitcoin_tip(tree: BlockTree, exclude: frozenset = frozenset()) -> int:
    """Leaf of maximal height; ties broken by smallest block id."""
    if not exclude:
        return tree._best[1]
    best_h, best_id = -1, None
    for bid, h in tree.heights.items():
        if bid in exclude:
            continue
        if h > best_h or (h == best_h and bid < best_id):
            best_h, best_id = h, bid
    return best_id if best_id is not None else tree.genesis_id


def ghost_tip(tree: BlockTree, exclude: frozenset = frozenset()) -> int:
    """Descend from genesis into the heaviest-subtree child each step."""
    penalty: dict[int, int] = {}
    for bid in exclude:
        if bid not in tree.blocks:
            continue
        amount = tree.block_weight[bid]
        node: Optional[int] = bid
        while node is not None:
            penalty[node] = penalty.get(node, 0) + amount
            node = tree.blocks[node]["parent"]
    node = tree.genesis_id
    while True:
        best_child = None
        best_weight = 0
        for child in tree.children[node]:
            if child in exclude:
                continue
            w = tree.weights[child] - penalty.get(child, 0)
            if w <= 0:
                continue
            if (best_child is None or w > best_weight
                    or (w == best_weight and child < best_child)):
                best_child, best_weight = child, w
        if best_child is None:
            return node
        node = best_child


def parasite_share(tree: BlockTree, tip: int) -> float:
    chain = tree.chain_from(tip)
    if not chain:
        return 0.0
    flagged = sum(1 for bid in chain if tree.blocks[bid].get("parasite"))
    return flagged / len(chain)


class MinerPeer(Peer):
    """One miner; the protocol only differs in tip selection."""

    def __init__(self, peer_id: int, protocol: str):
        super().__init__(peer_id)
        self.protocol = protocol
        self.tree = BlockTree()
        self.rate = 1.0
        self.base_probability = 0.05
        self._counter = 0

    def initialize(self, ctx: InitContext, rng) -> None:
        super().initialize(ctx, rng)
        rates = ctx.algo_params["miningRates"]
        self.rate = rates[self.id]
        self.base_probability = ctx.algo_params["baseProbability"]

    def select_tip(self, exclude: frozenset = frozenset()) -> int:
        if self.protocol == "ethereum":
            return ghost_tip(self.tree, exclude)
        return bitcoin_tip(self.tree, exclude)

    def race_scores(self, base: int, branch_ids: set, exclude: frozenset):
        """How a hidden branch rooted at ``base`` fares against the public
        chain, in this protocol's own metric.

        Returns (branch score, public score, public tip height).  Longest
        chain compares heights; GHOST compares the subtree weights the
        descent at the fork point actually adjudicates, so internally
        forked coalition work still counts in full.
        """
        tree = self.tree
        public_tip = self.select_tip(exclude)
        public_height = tree.heights[public_tip]
        if self.protocol == "ethereum":
            branch_score = public_score = 0
            for child in tree.children[base]:
                w = tree.weights[child]
                if child in branch_ids:
                    branch_score = max(branch_score, w)
                elif child not in exclude:
                    public_score = max(public_score, w)
            return branch_score, public_score, public_height
        base_height = tree.heights[base]
        branch_score = base_height
        for bid in branch_ids:
            if bid in tree.blocks and tree.descends_from(bid, base):
                branch_score = max(branch_score, tree.heights[bid])
        return branch_score - base_height, public_height - base_height, public_height

    def pick_uncles(self, parent: int) -> list[int]:
        """Recent known off-chain blocks not yet referenced along this line."""
        tree = self.tree
        path: list[int] = []
        node: Optional[int] = parent
        for _ in range(UNCLE_DEPTH):
            if node is None:
                break
            path.append(node)
            node = tree.blocks[node]["parent"]
        on_path = set(path)
        if node is not None:
            on_path.add(node)
        referenced = set()
        for pid in path:
            referenced.update(tree.blocks[pid].get("uncles", ()))
        candidates = []
        for ancestor in path[1:] + ([node] if node is not None else []):
            for child in tree.children[ancestor]:
                if child not in on_path and child not in referenced:
                    candidates.append(child)
        candidates.sort()
        return candidates[:MAX_UNCLES]

    def attempt_mine(self, round_no: int, parent: int, parasite: bool) -> Optional[dict]:
        if self.rng.random() >= self.rate * self.base_probability:
            return None
        self._counter += 1
        block = {"id": block_id(self.id, round_no, self._counter),
                 "parent": parent, "miner": self.id, "round": round_no,
                 "parasite": parasite}
        if self.protocol == "ethereum":
            uncles = self.pick_uncles(parent)
            if uncles:
                block["uncles"] = uncles
        self.tree.integrate(block)
        if self.iface is not None:
            self.iface.log("debug", "mined",
                           {"block": block["id"], "height": self.tree.heights[block["id"]],
                            "parasite": parasite})
        return block

    def on_block(self, src, msg, iface, round_no) -> None:
        self.tree.integrate(msg["block"])

    def run_round(self, round_no: int, iface) -> None:
        for src, msg in iface.receive_all():
            if isinstance(msg, dict) and msg.get("kind") == "block":
                self.on_block(src, msg, iface, round_no)
            else:
                iface.log("warning", "unknown-kind", {"from": src})
        tip = self.select_tip()
        block = self.attempt_mine(round_no, tip, parasite=False)
        if block is not None:
            iface.broadcast({"kind": "block", "block": block})

    def collect_metrics(self) -> dict[str, float]:
        tip = self.select_tip()
        return {
            "parasiteShare": parasite_share(self.tree, tip),
            "chainHeight": float(self.tree.heights[tip]),
            "blockCount": float(len(self.tree.blocks) - 1),
        }

    def snapshot(self) -> dict[str, Any]:
        tip = self.select_tip()
        return {"tip": tip, "height": self.tree.heights[tip],
                "blocks": len(self.tree.blocks)}


class BlockchainFamily:
    def __init__(self, protocol: str):
        self.protocol = protocol

    def defaults(self, peer_count: int) -> dict[str, Any]:
        return {
            "miningRates": [1] * peer_count,
            "baseProbability": 0.05,
            "publicBlockThreshold": 2,
            "leadThreshold": 1,
        }

    def validate(self, cfg) -> None:
        params = cfg.algo_params
        rates = params.get("miningRates")
        if rates is not None:
            if len(rates) != cfg.peer_count:
                raise ValidationError("algoParams.miningRates must list one rate per peer")
            if any(r <= 0 for r in rates):
                raise ValidationError("algoParams.miningRates must be positive")
            base = params.get("baseProbability", 0.05)
            if max(rates) * base > 1:
                raise ValidationError("miningRate x baseProbability must not exceed 1")

    def channel_override(self, params) -> Optional[dict]:
        return None

    def equivocation(self) -> dict[str, Any]:
        return {"kinds": [], "field": "value"}

    def make_peers(self, cfg, ids) -> dict[int, Peer]:
        return {pid: MinerPeer(pid, self.protocol) for pid in ids}

    def topology(self, cfg, test_index):
        return None

    def extras(self, cfg, test_index, adjacency) -> dict[int, dict]:
        return {}

    def finalize(self, cfg, per_peer: dict[int, dict], channel_stats) -> dict[str, float]:
        shares = [m["parasiteShare"] for m in per_peer.values()]
        heights = [m["chainHeight"] for m in per_peer.values()]
        n = max(len(per_peer), 1)
        return {
            "parasiteShare": sum(shares) / n,
            "chainHeight": sum(heights) / n,
        }
