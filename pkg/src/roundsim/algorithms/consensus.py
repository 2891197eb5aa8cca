"""Byzantine-tolerant PBFT and crash-tolerant Raft replicas.

PBFT runs a stop-and-wait pipeline: the primary of the current view
broadcasts pre-prepare for one sequence number, replicas answer with
prepare, then commit; 2f matching prepares prepare a value and 2f+1
matching commits (own vote included) finalize it.  Timeouts drive view
changes that rotate the primary.

Raft elects a leader with randomized timeouts; the leader broadcasts one
outstanding value per round and commits it once a strict majority of the
other n-1 replicas acknowledge, which is the quorum rule that makes
progress stop exactly when half the followers are gone.
"""

from __future__ import annotations

from typing import Any, Optional

from ..config import ValidationError
from ..peer import InitContext, Peer


class PbftReplica(Peer):
    def __init__(self, peer_id: int):
        super().__init__(peer_id)
        self.n = 0
        self.f = 0
        self.view = 0
        self.committed: list[int] = []
        self.latencies: list[int] = []
        self.phase_log: dict[tuple[int, int], dict] = {}
        self.view_votes: dict[int, set[int]] = {}
        self.outstanding: Optional[int] = None
        self.timeout_rounds = 20
        self.stall_rounds = 0
        self.equivocation_evidence = 0

    def initialize(self, ctx: InitContext, rng) -> None:
        super().initialize(ctx, rng)
        self.n = ctx.peer_count
        self.f = (self.n - 1) // 3
        self.timeout_rounds = ctx.algo_params["timeoutRounds"]

    def primary_of(self, view: int) -> int:
        return view % self.n

    def _entry(self, view: int, seq: int) -> dict:
        return self.phase_log.setdefault((view, seq), {
            "value": None, "proposed_at": None,
            "prepares": {}, "commits": {},
            "prepare_sent": False, "commit_sent": False,
        })

    # -- message handlers ----------------------------------------------------

    def on_prePrepare(self, src, msg, iface, round_no) -> None:
        if msg["view"] != self.view or src != self.primary_of(self.view):
            return
        seq = msg["seq"]
        if seq != len(self.committed):
            return
        entry = self._entry(self.view, seq)
        if entry["value"] is not None:
            if entry["value"] != msg["value"]:
                self.equivocation_evidence += 1
                iface.log("warning", "equivocation-evidence",
                          {"view": self.view, "seq": seq})
            return
        entry["value"] = msg["value"]
        entry["proposed_at"] = msg["proposedAt"]
        if not entry["prepare_sent"]:
            entry["prepare_sent"] = True
            entry["prepares"][self.id] = msg["value"]
            iface.broadcast({"kind": "prepare", "view": self.view,
                             "seq": seq, "value": msg["value"]})

    def on_prepare(self, src, msg, iface, round_no) -> None:
        if msg["view"] != self.view:
            return
        self._entry(self.view, msg["seq"])["prepares"][src] = msg["value"]

    def on_commit(self, src, msg, iface, round_no) -> None:
        if msg["view"] != self.view:
            return
        self._entry(self.view, msg["seq"])["commits"][src] = msg["value"]

    def on_viewChange(self, src, msg, iface, round_no) -> None:
        target = msg["newView"]
        if isinstance(target, int) and target > self.view:
            self.view_votes.setdefault(target, set()).add(src)

    def on_newView(self, src, msg, iface, round_no) -> None:
        v = msg["view"]
        if isinstance(v, int) and v > self.view and src == self.primary_of(v):
            self._adopt_view(v, iface, round_no)

    # -- round step ------------------------------------------------------------

    def run_round(self, round_no: int, iface) -> None:
        self.dispatch(iface.receive_all(), iface, round_no)
        progressed = self._evaluate(iface, round_no)
        progressed = self._check_view_quorum(iface, round_no) or progressed

        if progressed:
            self.stall_rounds = 0
        else:
            self.stall_rounds += 1
            if self.stall_rounds >= self.timeout_rounds:
                self.stall_rounds = 0
                target = self.view + 1
                self.view_votes.setdefault(target, set()).add(self.id)
                iface.broadcast({"kind": "viewChange", "newView": target})
                self._check_view_quorum(iface, round_no)

        if self.primary_of(self.view) == self.id and self.outstanding is None:
            seq = len(self.committed)
            value = seq
            entry = self._entry(self.view, seq)
            if entry["value"] is None:
                entry["value"] = value
                entry["proposed_at"] = round_no
                entry["prepare_sent"] = True
                entry["prepares"][self.id] = value
                self.outstanding = seq
                iface.broadcast({"kind": "prePrepare", "view": self.view, "seq": seq,
                                 "value": value, "proposedAt": round_no})

    def _evaluate(self, iface, round_no: int) -> bool:
        progressed = False
        while True:
            seq = len(self.committed)
            entry = self.phase_log.get((self.view, seq))
            if entry is None or entry["value"] is None:
                break
            value = entry["value"]
            prepare_count = sum(1 for v in entry["prepares"].values() if v == value)
            if prepare_count >= 2 * self.f and not entry["commit_sent"]:
                entry["commit_sent"] = True
                entry["commits"][self.id] = value
                iface.broadcast({"kind": "commit", "view": self.view,
                                 "seq": seq, "value": value})
            commit_count = sum(1 for v in entry["commits"].values() if v == value)
            if commit_count >= 2 * self.f + 1:
                self.committed.append(value)
                latency = round_no - entry["proposed_at"]
                self.latencies.append(latency)
                iface.log("info", "commit",
                          {"seq": seq, "value": value, "view": self.view,
                           "latency": latency})
                if self.outstanding == seq:
                    self.outstanding = None
                progressed = True
                continue
            break
        return progressed

    def _check_view_quorum(self, iface, round_no: int) -> bool:
        adopted = False
        for target in sorted(self.view_votes):
            if target > self.view and len(self.view_votes[target]) >= 2 * self.f + 1:
                self._adopt_view(target, iface, round_no)
                adopted = True
        return adopted

    def _adopt_view(self, view: int, iface, round_no: int) -> None:
        self.view = view
        self.stall_rounds = 0
        self.outstanding = None
        iface.log("info", "view-change", {"view": view})
        if self.primary_of(view) == self.id:
            iface.broadcast({"kind": "newView", "view": view})

    def collect_metrics(self) -> dict[str, float]:
        latency = sum(self.latencies) / len(self.latencies) if self.latencies else 0.0
        return {"throughput": float(len(self.committed)), "latency": latency,
                "view": float(self.view)}

    def snapshot(self) -> dict[str, Any]:
        return {"view": self.view, "committed": list(self.committed),
                "stall": self.stall_rounds}


class RaftReplica(Peer):
    def __init__(self, peer_id: int):
        super().__init__(peer_id)
        self.n = 0
        self.term = 0
        self.role = "follower"
        self.voted_for: Optional[int] = None
        self.votes: set[int] = set()
        self.log: list[int] = []
        self.commit_index = -1
        self.acks: dict[int, set[int]] = {}
        self.timer = 0
        self.timeout_lo = 10
        self.timeout_hi = 20

    def initialize(self, ctx: InitContext, rng) -> None:
        super().initialize(ctx, rng)
        self.n = ctx.peer_count
        lo, hi = ctx.algo_params["electionTimeoutRange"]
        self.timeout_lo, self.timeout_hi = lo, hi
        self.timer = rng.randint(lo, hi)

    def _majority(self) -> int:
        return self.n // 2 + 1

    def _follower_majority(self) -> int:
        return (self.n - 1) // 2 + 1

    def _reset_timer(self) -> None:
        self.timer = self.rng.randint(self.timeout_lo, self.timeout_hi)

    def _become_follower(self, term: int) -> None:
        if term > self.term:
            self.term = term
            self.voted_for = None
        self.role = "follower"

    def _advance_commit(self, new_index: int, iface, round_no: int) -> None:
        while self.commit_index < new_index:
            self.commit_index += 1
            iface.log("info", "commit",
                      {"index": self.commit_index,
                       "value": self.log[self.commit_index], "term": self.term})

    def run_round(self, round_no: int, iface) -> None:
        leader_traffic = False
        for src, msg in iface.receive_all():
            kind = msg.get("kind")
            term = msg.get("term", -1)
            if kind == "requestVote":
                if term > self.term:
                    self._become_follower(term)
                if (term == self.term and self.role == "follower"
                        and self.voted_for in (None, src)):
                    self.voted_for = src
                    iface.unicast(src, {"kind": "voteGranted", "term": term})
                    self._reset_timer()
            elif kind == "voteGranted":
                if self.role == "candidate" and term == self.term:
                    self.votes.add(src)
            elif kind == "appendEntries":
                if term < self.term:
                    continue
                self._become_follower(term)
                leader_traffic = True
                self._reset_timer()
                index, value = msg["index"], msg["value"]
                if index == len(self.log):
                    self.log.append(value)
                elif index < len(self.log):
                    self.log[index] = value
                if index < len(self.log):
                    iface.unicast(src, {"kind": "ack", "term": term, "index": index})
                bound = min(msg["leaderCommit"], len(self.log) - 1)
                if bound > self.commit_index:
                    self._advance_commit(bound, iface, round_no)
            elif kind == "ack":
                if self.role == "leader" and term == self.term:
                    self.acks.setdefault(msg["index"], set()).add(src)
            else:
                iface.log("warning", "unknown-kind", {"from": src, "kind": kind})

        if self.role == "candidate" and len(self.votes) >= self._majority():
            self.role = "leader"
            self.acks = {}
            iface.log("info", "leader", {"term": self.term})

        if self.role == "leader":
            pending = len(self.log) - 1
            if pending >= 0 and len(self.acks.get(pending, ())) >= self._follower_majority():
                self._advance_commit(pending, iface, round_no)
            if self.commit_index == len(self.log) - 1:
                self.log.append(len(self.log))
            iface.broadcast({"kind": "appendEntries", "term": self.term,
                             "index": len(self.log) - 1, "value": self.log[-1],
                             "leaderCommit": self.commit_index})
        else:
            if not leader_traffic:
                self.timer -= 1
                if self.timer <= 0:
                    self.role = "candidate"
                    self.term += 1
                    self.voted_for = self.id
                    self.votes = {self.id}
                    self._reset_timer()
                    iface.broadcast({"kind": "requestVote", "term": self.term})

    def collect_metrics(self) -> dict[str, float]:
        return {"committed": float(self.commit_index + 1), "term": float(self.term)}

    def snapshot(self) -> dict[str, Any]:
        return {"term": self.term, "role": self.role,
                "log": len(self.log), "commit": self.commit_index}


class PbftFamily:
    def defaults(self, peer_count: int) -> dict[str, Any]:
        return {"timeoutRounds": 20}

    def validate(self, cfg) -> None:
        if cfg.algo_params.get("timeoutRounds", 20) < 1:
            raise ValidationError("algoParams.timeoutRounds must be >= 1")

    def channel_override(self, params):
        return None

    def equivocation(self) -> dict[str, Any]:
        # The split applies to every value-carrying phase; a conflicting
        # pre-prepare is what stalls a view under a faulty primary.
        return {"kinds": ["prePrepare", "prepare", "commit"], "field": "value"}

    def make_peers(self, cfg, ids):
        return {pid: PbftReplica(pid) for pid in ids}

    def topology(self, cfg, test_index):
        return None

    def extras(self, cfg, test_index, adjacency):
        return {}

    def finalize(self, cfg, per_peer, channel_stats) -> dict[str, float]:
        n = max(len(per_peer), 1)
        return {
            "throughput": sum(m["throughput"] for m in per_peer.values()) / n,
            "latency": sum(m["latency"] for m in per_peer.values()) / n,
        }


class RaftFamily:
    def defaults(self, peer_count: int) -> dict[str, Any]:
        return {"electionTimeoutRange": [10, 20]}

    def validate(self, cfg) -> None:
        rng = cfg.algo_params.get("electionTimeoutRange", [10, 20])
        if (not isinstance(rng, (list, tuple)) or len(rng) != 2
                or rng[0] < 1 or rng[0] > rng[1]):
            raise ValidationError("algoParams.electionTimeoutRange must be [lo, hi], 1 <= lo <= hi")

    def channel_override(self, params):
        return None

    def equivocation(self) -> dict[str, Any]:
        return {"kinds": ["appendEntries"], "field": "value"}

    def make_peers(self, cfg, ids):
        return {pid: RaftReplica(pid) for pid in ids}

    def topology(self, cfg, test_index):
        return None

    def extras(self, cfg, test_index, adjacency):
        return {}

    def finalize(self, cfg, per_peer, channel_stats) -> dict[str, float]:
        n = max(len(per_peer), 1)
        return {"committed": sum(m["committed"] for m in per_peer.values()) / n}
