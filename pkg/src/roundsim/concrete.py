"""Socket-based execution: one leader process, N-1 followers, lockstep rounds.

The wire protocol is TCP with 4-byte big-endian length-prefixed UTF-8 JSON
frames of kinds hello/assign/packetBatch/barrier/done.  Peers are
partitioned into contiguous ranges, one per process; a channel lives in the
process that owns its destination peer, so delay/drop/duplicate draws use
the same per-channel streams as abstract mode and the two modes produce
identical algorithm behavior.  Message delays are still simulated rounds;
real network latency is absorbed by the per-round barrier.
"""

from __future__ import annotations

import json
import socket
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Optional

from . import algorithms
from .config import ExperimentConfig
from .engine import (RunSummary, TestResult, World, aggregate_metrics,
                     default_workers, host_metadata)
from .eventlog import JsonlSink
from .network import ChannelStats

MAX_FRAME = 64 * 1024 * 1024
CONNECT_ATTEMPTS = 40
CONNECT_BACKOFF = 0.25
IO_TIMEOUT = 300.0


class TransportError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# Framing

def encode_frame(kind: str, round_no: int, payload: Any) -> bytes:
    body = json.dumps({"kind": kind, "round": round_no, "payload": payload},
                      separators=(",", ":")).encode("utf-8")
    if len(body) > MAX_FRAME:
        raise TransportError(f"frame of {len(body)} bytes exceeds limit")
    return struct.pack(">I", len(body)) + body


def decode_frame(body: bytes) -> dict[str, Any]:
    doc = json.loads(body.decode("utf-8"))
    if not isinstance(doc, dict) or "kind" not in doc:
        raise TransportError("malformed frame body")
    return doc


def send_frame(sock: socket.socket, kind: str, round_no: int, payload: Any) -> None:
    sock.sendall(encode_frame(kind, round_no, payload))


def recv_exact(sock: socket.socket, count: int) -> bytes:
    chunks = []
    while count:
        chunk = sock.recv(count)
        if not chunk:
            raise TransportError("connection closed mid-frame")
        chunks.append(chunk)
        count -= len(chunk)
    return b"".join(chunks)


def recv_frame(sock: socket.socket) -> dict[str, Any]:
    header = recv_exact(sock, 4)
    (length,) = struct.unpack(">I", header)
    if length > MAX_FRAME:
        raise TransportError(f"incoming frame of {length} bytes exceeds limit")
    return decode_frame(recv_exact(sock, length))


# --------------------------------------------------------------------------
# Partitioning

def partition_peers(peer_count: int, process_count: int) -> list[tuple[int, int]]:
    """Contiguous [lo, hi) ranges, one per process; process 0 is the leader."""
    base, extra = divmod(peer_count, process_count)
    ranges = []
    start = 0
    for i in range(process_count):
        size = base + (1 if i < extra else 0)
        ranges.append((start, start + size))
        start += size
    return ranges


def _owner(partition: list[tuple[int, int]], pid: int) -> int:
    for i, (lo, hi) in enumerate(partition):
        if lo <= pid < hi:
            return i
    raise ValueError(f"peer {pid} outside every partition range")


# --------------------------------------------------------------------------
# Shared per-process run loop

class _ProcessRun:
    """Executes this process's share of every test; subclasses exchange
    packets and barriers with the rest of the session."""

    def __init__(self, cfg: ExperimentConfig, workers: Optional[int], role: str,
                 process_index: int, peer_range: tuple[int, int]):
        self.cfg = cfg
        self.workers = workers if workers is not None else default_workers()
        self.role = role
        self.process_index = process_index
        self.peer_range = peer_range
        self.out = Path(cfg.output_dir) / f"process_{process_index}"
        self.out.mkdir(parents=True, exist_ok=True)
        self.pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None
        self.local_results: list[TestResult] = []
        self.log_failures = 0

    def close(self) -> None:
        if self.pool is not None:
            self.pool.shutdown()

    def run_test(self, test_index: int) -> tuple[dict, dict, TestResult]:
        cfg = self.cfg
        lo, hi = self.peer_range
        start = time.perf_counter()
        sink = JsonlSink(self.out / f"test_{test_index}.jsonl", threshold=cfg.log_level)
        try:
            world = World(cfg, test_index, sink, local_ids=list(range(lo, hi)))
            world.emit("info", "test-start", {
                "algorithm": cfg.algorithm, "peers": cfg.peer_count,
                "rounds": cfg.rounds_per_test, "baseSeed": cfg.base_seed,
            })
            world.emit("info", "fault-assignments", {
                "assignments": {str(pid): r.kind
                                for pid, r in sorted(world.resolved_faults.items())},
            })
            for _ in range(cfg.rounds_per_test):
                inboxes = world.receive_phase()
                world.compute_phase(inboxes, self.pool, self.workers)
                outbound = world.send_phase()
                inbound = self.exchange(world.round, outbound)
                world.enqueue_remote(inbound, world.round)
                world.round += 1
            per_peer = world.collect_per_peer_metrics()
            stats = world.channel_stats()
            result = TestResult(
                test_index,
                wall_clock=time.perf_counter() - start,
                record_count=sink.record_count,
                faults={pid: r.kind for pid, r in world.resolved_faults.items()},
            )
            return per_peer, stats, result
        finally:
            self.log_failures += sink.write_failures
            sink.close()

    def exchange(self, round_no: int, outbound) -> list[tuple[int, int, Any]]:
        raise NotImplementedError

    def write_local_summary(self, tests: list[TestResult],
                            aggregate: dict) -> RunSummary:
        summary = RunSummary(
            config=self.cfg.to_doc(),
            tests=tests,
            aggregate=aggregate,
            host=host_metadata(self.role, str(self.out)),
            workers=self.workers,
            log_write_failures=self.log_failures,
        )
        (self.out / "summary.json").write_text(
            json.dumps(summary.to_doc(), indent=2), encoding="utf-8")
        return summary


def _encode_stats(stats: dict[tuple[int, int], ChannelStats]) -> dict[str, Any]:
    return {f"{s}-{d}": st.to_doc() for (s, d), st in stats.items()}


def _decode_stats(doc: dict[str, Any]) -> dict[tuple[int, int], ChannelStats]:
    out = {}
    for key, st in doc.items():
        s, d = key.split("-")
        out[(int(s), int(d))] = ChannelStats(**st)
    return out


# --------------------------------------------------------------------------
# Leader

class LeaderSession(_ProcessRun):
    def __init__(self, cfg: ExperimentConfig, workers: Optional[int] = None):
        spec = cfg.concrete
        partition = partition_peers(cfg.peer_count, spec.process_count)
        super().__init__(cfg, workers, "leader", 0, partition[0])
        self.partition = partition
        self.followers: list[socket.socket] = []
        self.follower_hosts: list[dict] = []

    def start(self) -> None:
        spec = self.cfg.concrete
        server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            server.bind(("", spec.leader_port))
        except OSError as exc:
            raise TransportError(f"cannot bind leader port {spec.leader_port}: {exc}")
        server.listen(spec.process_count)
        server.settimeout(30.0)
        expected = spec.process_count - 1
        digest = self.cfg.config_digest()
        try:
            for index in range(1, spec.process_count):
                try:
                    conn, _addr = server.accept()
                except socket.timeout:
                    missing = expected - len(self.followers)
                    raise TransportError(
                        f"startup timeout: {missing} of {expected} followers missing")
                conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                conn.settimeout(IO_TIMEOUT)
                hello = recv_frame(conn)
                if hello["kind"] != "hello":
                    raise TransportError(f"expected hello, got {hello['kind']}")
                if hello["payload"].get("configDigest") != digest:
                    send_frame(conn, "assign", 0, {"error": "config digest mismatch"})
                    raise TransportError("follower config digest mismatch")
                self.follower_hosts.append(hello["payload"].get("host", {}))
                lo, hi = self.partition[index]
                send_frame(conn, "assign", 0, {
                    "processIndex": index,
                    "peerRange": [lo, hi],
                    "partition": [list(r) for r in self.partition],
                    "configDigest": digest,
                    "config": self.cfg.to_doc(),
                })
                self.followers.append(conn)
        finally:
            server.close()

    def exchange(self, round_no: int, outbound) -> list[tuple[int, int, Any]]:
        per_proc: dict[int, list] = {}
        for src, dst, msg in outbound:
            per_proc.setdefault(_owner(self.partition, dst), []).append([src, dst, msg])
        inbound = per_proc.pop(0, [])
        for i, conn in enumerate(self.followers, start=1):
            frame = recv_frame(conn)
            while frame["kind"] == "packetBatch":
                if frame["round"] != round_no:
                    raise TransportError(
                        f"process {i} sent packets for round {frame['round']} "
                        f"during round {round_no}")
                for src, dst, msg in frame["payload"]:
                    owner = _owner(self.partition, dst)
                    if owner == 0:
                        inbound.append((src, dst, msg))
                    else:
                        per_proc.setdefault(owner, []).append([src, dst, msg])
                frame = recv_frame(conn)
            if frame["kind"] != "barrier" or frame["round"] != round_no:
                raise TransportError(
                    f"process {i} broke the barrier: got {frame['kind']} "
                    f"round {frame.get('round')} during round {round_no}")
        for i, conn in enumerate(self.followers, start=1):
            batch = per_proc.get(i)
            if batch:
                send_frame(conn, "packetBatch", round_no, batch)
            send_frame(conn, "barrier", round_no, None)
        return [(src, dst, msg) for src, dst, msg in inbound]

    def run(self) -> RunSummary:
        cfg = self.cfg
        tests: list[TestResult] = []
        try:
            for test_index in range(cfg.tests_per_run):
                per_peer, stats, result = self.run_test(test_index)
                for i, conn in enumerate(self.followers, start=1):
                    done = recv_frame(conn)
                    if done["kind"] != "done" or done["round"] != test_index:
                        raise TransportError(f"process {i} skipped the done exchange")
                    payload = done["payload"]
                    for pid, metrics in payload["perPeer"].items():
                        per_peer[int(pid)] = metrics
                    stats.update(_decode_stats(payload["channels"]))
                result.metrics = algorithms.finalize_metrics(cfg, per_peer, stats)
                tests.append(result)
                for conn in self.followers:
                    send_frame(conn, "done", test_index, None)
        finally:
            for conn in self.followers:
                conn.close()
            self.close()
        summary = self.write_local_summary(tests, aggregate_metrics(
            [t for t in tests if t.error is None]))
        return summary


# --------------------------------------------------------------------------
# Follower

class FollowerSession(_ProcessRun):
    def __init__(self, cfg: ExperimentConfig, workers: Optional[int] = None):
        super().__init__(cfg, workers, "follower", -1, (0, 0))
        self.conn: Optional[socket.socket] = None
        self.partition: list[tuple[int, int]] = []

    def start(self) -> None:
        spec = self.cfg.concrete
        last_error: Optional[Exception] = None
        for _ in range(CONNECT_ATTEMPTS):
            try:
                conn = socket.create_connection(
                    (spec.leader_address, spec.leader_port), timeout=10.0)
                break
            except OSError as exc:
                last_error = exc
                time.sleep(CONNECT_BACKOFF)
        else:
            raise TransportError(
                f"cannot reach leader {spec.leader_address}:{spec.leader_port}: {last_error}")
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        conn.settimeout(IO_TIMEOUT)
        digest = self.cfg.config_digest()
        send_frame(conn, "hello", 0, {
            "configDigest": digest,
            "host": host_metadata("follower", self.cfg.output_dir),
        })
        assign = recv_frame(conn)
        if assign["kind"] != "assign":
            raise TransportError(f"expected assign, got {assign['kind']}")
        payload = assign["payload"]
        if payload.get("error"):
            raise TransportError(f"leader rejected hello: {payload['error']}")
        if payload.get("configDigest") != digest:
            raise TransportError("assign config digest does not match local config")
        self.process_index = payload["processIndex"]
        lo, hi = payload["peerRange"]
        self.peer_range = (lo, hi)
        self.partition = [tuple(r) for r in payload["partition"]]
        self.out = Path(self.cfg.output_dir) / f"process_{self.process_index}"
        self.out.mkdir(parents=True, exist_ok=True)
        self.conn = conn

    def exchange(self, round_no: int, outbound) -> list[tuple[int, int, Any]]:
        assert self.conn is not None
        if outbound:
            send_frame(self.conn, "packetBatch", round_no,
                       [[src, dst, msg] for src, dst, msg in outbound])
        send_frame(self.conn, "barrier", round_no, None)
        inbound: list[tuple[int, int, Any]] = []
        frame = recv_frame(self.conn)
        while frame["kind"] == "packetBatch":
            inbound.extend((src, dst, msg) for src, dst, msg in frame["payload"])
            frame = recv_frame(self.conn)
        if frame["kind"] != "barrier" or frame["round"] != round_no:
            raise TransportError(
                f"leader broke the barrier: {frame['kind']} round {frame.get('round')}")
        return inbound

    def run(self) -> RunSummary:
        assert self.conn is not None
        cfg = self.cfg
        tests: list[TestResult] = []
        try:
            for test_index in range(cfg.tests_per_run):
                per_peer, stats, result = self.run_test(test_index)
                send_frame(self.conn, "done", test_index, {
                    "perPeer": {str(pid): m for pid, m in per_peer.items()},
                    "channels": _encode_stats(stats),
                    "wallClock": result.wall_clock,
                })
                ack = recv_frame(self.conn)
                if ack["kind"] != "done":
                    raise TransportError(f"expected done ack, got {ack['kind']}")
                tests.append(result)
        finally:
            self.conn.close()
            self.close()
        return self.write_local_summary(tests, {})


def run_concrete(cfg: ExperimentConfig, workers: Optional[int] = None) -> RunSummary:
    if cfg.concrete is None:
        raise TransportError("concrete mode requires a concrete section")
    if cfg.concrete.role == "leader":
        session = LeaderSession(cfg, workers)
        session.start()
        return session.run()
    session = FollowerSession(cfg, workers)
    session.start()
    return session.run()
