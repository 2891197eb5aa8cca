"""Run orchestration: runs -> tests -> rounds of receive, compute, send.

Determinism is a hard requirement: peers own their RNG streams, inboxes,
outboxes, and log buffers; the compute phase may fan out across a worker
pool, but channel mutation and log flushing happen in a single-threaded
merge step that walks peers in ascending id order.  Identical config and
seed therefore produce byte-identical logs at any worker count.
"""

from __future__ import annotations

import hashlib
import json
import os
import socket
import time
from concurrent.futures import ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path
from statistics import fmean, pstdev
from typing import Any, Optional

from . import algorithms
from .config import ExperimentConfig, build_topology, expand_fault_assignments
from .eventlog import JsonlSink, LogRecord, LogSink
from .faults import build_fault
from .network import Channel, NodeInterface
from .peer import InitContext, run_peer_round
from .seeds import make_rng


@dataclass
class TestResult:
    test_index: int
    metrics: dict[str, float] = field(default_factory=dict)
    wall_clock: float = 0.0
    record_count: int = 0
    faults: dict[int, str] = field(default_factory=dict)
    error: Optional[str] = None

    def to_doc(self) -> dict[str, Any]:
        return {
            "testIndex": self.test_index,
            "metrics": dict(self.metrics),
            "wallClock": self.wall_clock,
            "recordCount": self.record_count,
            "faults": {str(pid): kind for pid, kind in sorted(self.faults.items())},
            "error": self.error,
        }


@dataclass
class RunSummary:
    config: dict[str, Any]
    tests: list[TestResult]
    aggregate: dict[str, dict[str, float]]
    host: dict[str, Any]
    workers: int
    log_write_failures: int = 0

    def to_doc(self) -> dict[str, Any]:
        return {
            "config": self.config,
            "host": self.host,
            "workers": self.workers,
            "tests": [t.to_doc() for t in self.tests],
            "aggregate": self.aggregate,
            "logWriteFailures": self.log_write_failures,
        }


def host_metadata(role: str, output_dir: str) -> dict[str, Any]:
    name = socket.gethostname()
    try:
        ip = socket.gethostbyname(name)
    except OSError:
        ip = "127.0.0.1"
    return {"hostName": name, "hostIP": ip, "role": role, "outputDir": output_dir}


class World:
    """All mutable state of one computation (or one process's share of it)."""

    def __init__(self, cfg: ExperimentConfig, test_index: int, sink: LogSink,
                 local_ids: Optional[list[int]] = None):
        self.cfg = cfg
        self.test_index = test_index
        self.sink = sink
        self.round = 0
        n = cfg.peer_count

        adjacency = algorithms.topology_override(cfg, test_index)
        if adjacency is None:
            adjacency = build_topology(cfg.topology, n)
        self.adjacency = adjacency

        self.local_ids = sorted(local_ids) if local_ids is not None else list(range(n))
        local_set = set(self.local_ids)

        in_neighbors: dict[int, list[int]] = {pid: [] for pid in self.local_ids}
        for src, nbrs in adjacency.items():
            for dst in nbrs:
                if dst in local_set:
                    in_neighbors[dst].append(src)

        self.channels: dict[tuple[int, int], Channel] = {}
        for dst in self.local_ids:
            for src in sorted(in_neighbors[dst]):
                self.channels[(src, dst)] = Channel(
                    src, dst, cfg.channel,
                    make_rng(cfg.base_seed, test_index, "channel", (src, dst, "delay")),
                    make_rng(cfg.base_seed, test_index, "channel", (src, dst, "order")),
                )
        self.active: set[tuple[int, int]] = set()

        extras = algorithms.make_extras(cfg, test_index, adjacency)
        self.peers = algorithms.make_peers(cfg, self.local_ids)
        self.ifaces: dict[int, NodeInterface] = {}
        self.log_buffers: dict[int, list[LogRecord]] = {}
        for pid in self.local_ids:
            buffer: list[LogRecord] = []
            self.log_buffers[pid] = buffer
            iface = NodeInterface(pid, adjacency[pid], buffer.append, test_index)
            self.ifaces[pid] = iface
            peer = self.peers[pid]
            ctx = InitContext(pid, n, list(adjacency[pid]), cfg.algo_params,
                              cfg.rounds_per_test, extras.get(pid, {}))
            peer.initialize(ctx, make_rng(cfg.base_seed, test_index, "peer", pid))
            peer.iface = iface
            iface.bind_peer(peer)

        self.resolved_faults = expand_fault_assignments(
            cfg, make_rng(cfg.base_seed, test_index, "faultPlacement", 0))
        self.faults = {
            pid: build_fault(res, pid, cfg.algorithm, cfg.algo_params)
            for pid, res in self.resolved_faults.items() if pid in local_set
        }

    # -- phases --------------------------------------------------------------

    def receive_phase(self) -> dict[int, list[tuple[int, Any]]]:
        inboxes: dict[int, list[tuple[int, Any]]] = {}
        for key in sorted(self.active):
            channel = self.channels[key]
            packets = channel.collect_deliverable(self.round)
            if packets:
                box = inboxes.setdefault(key[1], [])
                for p in packets:
                    box.append((p.source, p.payload))
            if not channel.in_transit:
                self.active.discard(key)
        return inboxes

    def compute_phase(self, inboxes, pool: Optional[ThreadPoolExecutor] = None,
                      workers: int = 1) -> None:
        round_no = self.round
        for pid in self.local_ids:
            self.ifaces[pid].begin_round(round_no, inboxes.get(pid, []))
        if pool is None or workers <= 1 or len(self.local_ids) <= 1:
            for pid in self.local_ids:
                run_peer_round(self.peers[pid], round_no, self.ifaces[pid],
                               self.faults.get(pid))
            return
        chunks = _chunk(self.local_ids, workers)
        futures = [pool.submit(self._run_chunk, chunk, round_no) for chunk in chunks]
        done, _ = wait(futures)
        for fut in done:
            fut.result()

    def _run_chunk(self, chunk: list[int], round_no: int) -> None:
        for pid in chunk:
            run_peer_round(self.peers[pid], round_no, self.ifaces[pid],
                           self.faults.get(pid))

    def send_phase(self) -> list[tuple[int, int, Any]]:
        """Flush per-peer logs and outboxes in ascending peer order.

        Returns staged messages whose destination channel lives in another
        process; in abstract mode this list is always empty.
        """
        remote: list[tuple[int, int, Any]] = []
        for pid in self.local_ids:
            buffer = self.log_buffers[pid]
            if buffer:
                self.sink.emit_many(buffer)
                buffer.clear()
            for dst, msg in self.ifaces[pid].drain_outbox():
                key = (pid, dst)
                channel = self.channels.get(key)
                if channel is None:
                    remote.append((pid, dst, msg))
                else:
                    channel.enqueue(msg, self.round, self._channel_log)
                    if channel.in_transit:
                        self.active.add(key)
        return remote

    def enqueue_remote(self, packets, send_round: int) -> None:
        for src, dst, msg in packets:
            key = (src, dst)
            channel = self.channels[key]
            channel.enqueue(msg, send_round, self._channel_log)
            if channel.in_transit:
                self.active.add(key)

    def _channel_log(self, record: LogRecord) -> None:
        record.test_index = self.test_index
        record.round = self.round
        self.sink.emit(record)

    def emit(self, level: str, tag: str, payload: dict[str, Any]) -> None:
        self.sink.emit(LogRecord(level, tag, self.test_index, self.round, None, payload))

    # -- inspection ------------------------------------------------------------

    def collect_per_peer_metrics(self) -> dict[int, dict[str, float]]:
        return {pid: self.peers[pid].collect_metrics() for pid in self.local_ids}

    def channel_stats(self):
        return {key: ch.stats for key, ch in self.channels.items()}

    def digest(self) -> str:
        doc = {
            "round": self.round,
            "peers": {str(pid): self.peers[pid].snapshot() for pid in self.local_ids},
            "channels": {
                f"{src}-{dst}": [
                    (p.seq, p.delivery_round, p.payload)
                    for p in sorted(ch.in_transit, key=lambda p: p.seq)
                ]
                for (src, dst), ch in sorted(self.channels.items())
                if ch.in_transit
            },
        }
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _chunk(ids: list[int], parts: int) -> list[list[int]]:
    parts = max(1, min(parts, len(ids)))
    size, extra = divmod(len(ids), parts)
    chunks, start = [], 0
    for i in range(parts):
        end = start + size + (1 if i < extra else 0)
        chunks.append(ids[start:end])
        start = end
    return chunks


def step_round(world: World, pool: Optional[ThreadPoolExecutor] = None,
               workers: int = 1) -> None:
    """One receive-compute-send cycle; nothing sent in a round is visible to
    any receive in the same round, and every delivery is at least one round
    after its send."""
    inboxes = world.receive_phase()
    world.compute_phase(inboxes, pool, workers)
    leftover = world.send_phase()
    assert not leftover, "abstract mode routed a packet off-world"
    world.round += 1


def run_computation(cfg: ExperimentConfig, test_index: int, sink: LogSink,
                    workers: int = 1,
                    pool: Optional[ThreadPoolExecutor] = None) -> TestResult:
    """One full computation of roundsPerTest rounds."""
    start = time.perf_counter()
    records_before = sink.record_count
    try:
        world = World(cfg, test_index, sink)
    except Exception as exc:
        sink.emit(LogRecord("error", "test-init-failed", test_index, 0, None,
                            {"error": repr(exc)}))
        return TestResult(test_index, error=repr(exc),
                          wall_clock=time.perf_counter() - start)
    world.emit("info", "test-start", {
        "algorithm": cfg.algorithm, "peers": cfg.peer_count,
        "rounds": cfg.rounds_per_test, "baseSeed": cfg.base_seed,
    })
    fault_doc = {str(pid): res.kind for pid, res in sorted(world.resolved_faults.items())}
    world.emit("info", "fault-assignments", {"assignments": fault_doc})
    try:
        for _ in range(cfg.rounds_per_test):
            step_round(world, pool, workers)
    except Exception as exc:
        world.emit("error", "test-aborted", {"error": repr(exc)})
        return TestResult(test_index, error=repr(exc),
                          wall_clock=time.perf_counter() - start,
                          record_count=sink.record_count - records_before,
                          faults={pid: r.kind for pid, r in world.resolved_faults.items()})
    per_peer = world.collect_per_peer_metrics()
    metrics = algorithms.finalize_metrics(cfg, per_peer, world.channel_stats())
    world.emit("info", "metrics", dict(metrics))
    return TestResult(
        test_index,
        metrics=metrics,
        wall_clock=time.perf_counter() - start,
        record_count=sink.record_count - records_before,
        faults={pid: res.kind for pid, res in world.resolved_faults.items()},
    )


def run_reference_computation(cfg: ExperimentConfig, test_index: int,
                              sink: LogSink) -> TestResult:
    """Single-threaded reference executor: a plain loop with no pool
    machinery, kept as an independent oracle for the pooled path."""
    start = time.perf_counter()
    records_before = sink.record_count
    world = World(cfg, test_index, sink)
    world.emit("info", "test-start", {
        "algorithm": cfg.algorithm, "peers": cfg.peer_count,
        "rounds": cfg.rounds_per_test, "baseSeed": cfg.base_seed,
    })
    fault_doc = {str(pid): res.kind for pid, res in sorted(world.resolved_faults.items())}
    world.emit("info", "fault-assignments", {"assignments": fault_doc})
    for _ in range(cfg.rounds_per_test):
        inboxes = world.receive_phase()
        for pid in world.local_ids:
            world.ifaces[pid].begin_round(world.round, inboxes.get(pid, []))
        for pid in world.local_ids:
            run_peer_round(world.peers[pid], world.round, world.ifaces[pid],
                           world.faults.get(pid))
        world.send_phase()
        world.round += 1
    per_peer = world.collect_per_peer_metrics()
    metrics = algorithms.finalize_metrics(cfg, per_peer, world.channel_stats())
    world.emit("info", "metrics", dict(metrics))
    return TestResult(
        test_index, metrics=metrics,
        wall_clock=time.perf_counter() - start,
        record_count=sink.record_count - records_before,
        faults={pid: res.kind for pid, res in world.resolved_faults.items()},
    )


def default_workers() -> int:
    return os.cpu_count() or 1


def aggregate_metrics(tests: list[TestResult]) -> dict[str, dict[str, float]]:
    keys: list[str] = []
    for t in tests:
        for k in t.metrics:
            if k not in keys:
                keys.append(k)
    out = {}
    for k in keys:
        values = [t.metrics[k] for t in tests if k in t.metrics]
        out[k] = {
            "mean": fmean(values),
            "stddev": pstdev(values) if len(values) > 1 else 0.0,
            "count": float(len(values)),
        }
    return out


def run_experiment(cfg: ExperimentConfig, workers: Optional[int] = None) -> RunSummary:
    """Execute testsPerRun computations, write one JSONL log per test plus a
    summary.json, and return the summary."""
    if cfg.mode == "concrete":
        from . import concrete

        return concrete.run_concrete(cfg, workers)

    workers = workers if workers is not None else default_workers()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".probe"
    probe.write_text("")  # surfaces an unwritable directory before any test
    probe.unlink()

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    tests: list[TestResult] = []
    failures = 0
    try:
        for test_index in range(cfg.tests_per_run):
            sink = JsonlSink(out / f"test_{test_index}.jsonl", threshold=cfg.log_level)
            try:
                tests.append(run_computation(cfg, test_index, sink, workers, pool))
            finally:
                failures += sink.write_failures
                sink.close()
    finally:
        if pool is not None:
            pool.shutdown()

    summary = RunSummary(
        config=cfg.to_doc(),
        tests=tests,
        aggregate=aggregate_metrics([t for t in tests if t.error is None]),
        host=host_metadata("abstract", cfg.output_dir),
        workers=workers,
        log_write_failures=failures,
    )
    (out / "summary.json").write_text(json.dumps(summary.to_doc(), indent=2),
                                      encoding="utf-8")
    return summary
