import json
from concurrent.futures import ThreadPoolExecutor

import pytest

from conftest import make_config

from roundsim import algorithms
from roundsim.engine import (World, aggregate_metrics, run_computation,
                             run_experiment, run_reference_computation,
                             step_round)
from roundsim.eventlog import JsonlSink, LogRecord, MemorySink

SMALL = dict(peerCount=2, roundsPerTest=40, baseSeed=17)


def run_to_sink(cfg, workers=1, pool=None):
    sink = MemorySink()
    result = run_computation(cfg, 0, sink, workers=workers, pool=pool)
    return result, sink


# -- round mechanics ------------------------------------------------------------

def test_message_delivered_exactly_next_round_at_delay_one():
    # ABP sender transmits in round 0; the receiver's delivery records land
    # on odd rounds: a full hand-trace of the three-phase cycle.
    cfg = make_config(**SMALL)
    _, sink = run_to_sink(cfg)
    deliver_rounds = [r.round for r in sink.records if r.tag == "deliver"]
    assert deliver_rounds[:5] == [1, 3, 5, 7, 9]


def test_causality_no_same_round_delivery():
    cfg = make_config(algorithm="pbft", peerCount=4, roundsPerTest=30)
    sink = MemorySink()
    world = World(cfg, 0, sink)
    for _ in range(30):
        step_round(world, None, 1)
        for ch in world.channels.values():
            assert all(p.delivery_round > p.send_round for p in ch.in_transit)


def test_round_counter_increments_without_traffic():
    cfg = make_config(algorithm="chord", peerCount=4, roundsPerTest=5,
                      algoParams={"queryCount": 0})
    sink = MemorySink()
    world = World(cfg, 0, sink)
    for expected in range(5):
        assert world.round == expected
        step_round(world, None, 1)
    assert world.round == 5


# -- determinism ----------------------------------------------------------------

ALGO_CONFIGS = [
    dict(algorithm="bitcoin", peerCount=6, roundsPerTest=50),
    dict(algorithm="pbft", peerCount=7, roundsPerTest=50),
    dict(algorithm="raft", peerCount=5, roundsPerTest=50),
    dict(algorithm="abp", peerCount=2, roundsPerTest=50,
         algoParams={"adversityLevel": 3, "series": "delay"}),
    dict(algorithm="kademlia", peerCount=8, roundsPerTest=20,
         algoParams={"queryCount": 10}),
]


@pytest.mark.parametrize("doc", ALGO_CONFIGS, ids=lambda d: d["algorithm"])
def test_pooled_executor_matches_reference_digests(doc):
    cfg = make_config(baseSeed=5, **doc)
    ref = World(cfg, 0, MemorySink())
    pooled = World(cfg, 0, MemorySink())
    with ThreadPoolExecutor(max_workers=4) as pool:
        for _ in range(cfg.rounds_per_test):
            step_round(pooled, pool, 4)
            inboxes = ref.receive_phase()
            from roundsim.peer import run_peer_round

            for pid in ref.local_ids:
                ref.ifaces[pid].begin_round(ref.round, inboxes.get(pid, []))
            for pid in ref.local_ids:
                run_peer_round(ref.peers[pid], ref.round, ref.ifaces[pid],
                               ref.faults.get(pid))
            ref.send_phase()
            ref.round += 1
            assert pooled.digest() == ref.digest()


def test_same_seed_byte_identical_logs(tmp_path):
    doc = dict(algorithm="raft", peerCount=5, roundsPerTest=60, testsPerRun=2,
               baseSeed=3, logLevel="debug")
    files = []
    for attempt in range(2):
        out = tmp_path / f"run{attempt}"
        cfg = make_config(outputDir=str(out), **doc)
        run_experiment(cfg, workers=2)
        files.append(sorted(out.glob("test_*.jsonl")))
    for a, b in zip(*files):
        assert a.read_bytes() == b.read_bytes()


def test_worker_count_does_not_change_results(tmp_path):
    outputs = []
    for workers in (1, 2, 8):
        out = tmp_path / f"w{workers}"
        cfg = make_config(algorithm="pbft", peerCount=7, roundsPerTest=80,
                          baseSeed=11, outputDir=str(out))
        summary = run_experiment(cfg, workers=workers)
        outputs.append((summary.tests[0].metrics,
                        (out / "test_0.jsonl").read_bytes()))
    assert outputs[0] == outputs[1] == outputs[2]


def test_reference_executor_matches_metrics():
    cfg = make_config(algorithm="bitcoin", peerCount=5, roundsPerTest=60, baseSeed=2)
    pooled, _ = run_to_sink(cfg, workers=1)
    reference = run_reference_computation(cfg, 0, MemorySink())
    assert pooled.metrics == reference.metrics


# -- runs, summaries, logging ------------------------------------------------------

def test_run_summary_counts_and_files(tmp_path):
    cfg = make_config(testsPerRun=10, outputDir=str(tmp_path / "out"), **SMALL)
    summary = run_experiment(cfg, workers=1)
    assert len(summary.tests) == 10
    assert sorted(p.name for p in (tmp_path / "out").glob("test_*.jsonl")) == \
        [f"test_{i}.jsonl" for i in range(10)]
    assert (tmp_path / "out" / "summary.json").exists()


def test_minimal_single_round_run(tmp_path):
    cfg = make_config(algorithm="raft", peerCount=2, roundsPerTest=1,
                      testsPerRun=1, outputDir=str(tmp_path / "o"))
    summary = run_experiment(cfg, workers=1)
    assert len(summary.tests) == 1
    assert summary.tests[0].error is None


def test_aggregate_recomputable_from_tests(tmp_path):
    cfg = make_config(testsPerRun=4, outputDir=str(tmp_path / "agg"), **SMALL)
    summary = run_experiment(cfg, workers=1)
    recomputed = aggregate_metrics(summary.tests)
    assert recomputed == summary.aggregate


def test_unwritable_output_dir_fails_before_tests(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = make_config(outputDir=str(blocker / "sub"), **SMALL)
    with pytest.raises(OSError):
        run_experiment(cfg, workers=1)


def test_peer_init_failure_aborts_test_but_run_continues(tmp_path, monkeypatch):
    cfg = make_config(testsPerRun=3, outputDir=str(tmp_path / "x"), **SMALL)
    real = algorithms.make_peers
    calls = {"n": 0}

    def flaky(cfg_, ids):
        calls["n"] += 1
        if calls["n"] == 1:
            raise RuntimeError("injected init failure")
        return real(cfg_, ids)

    monkeypatch.setattr(algorithms, "make_peers", flaky)
    monkeypatch.setattr("roundsim.engine.algorithms.make_peers", flaky)
    summary = run_experiment(cfg, workers=1)
    assert summary.tests[0].error is not None
    assert summary.tests[1].error is None and summary.tests[2].error is None


def test_peer_round_error_is_non_fatal():
    cfg = make_config(**SMALL)
    sink = MemorySink()
    world = World(cfg, 0, sink)

    original = world.peers[0].run_round
    state = {"fired": False}

    def explode_once(round_no, iface):
        if not state["fired"]:
            state["fired"] = True
            raise RuntimeError("boom")
        return original(round_no, iface)

    world.peers[0].run_round = explode_once
    for _ in range(10):
        step_round(world, None, 1)
    assert any(r.tag == "peer-error" for r in sink.records)
    assert world.round == 10


# -- log sink ------------------------------------------------------------------------

def test_level_threshold_filters(tmp_path):
    sink = JsonlSink(tmp_path / "a.jsonl", threshold="info")
    sink.emit(LogRecord("trace", "t", 0, 0))
    sink.emit(LogRecord("info", "metric", 0, 0))
    sink.close()
    lines = (tmp_path / "a.jsonl").read_text().splitlines()
    assert len(lines) == 1
    assert json.loads(lines[0])["tag"] == "metric"


def test_many_records_preserve_per_peer_order(tmp_path):
    sink = JsonlSink(tmp_path / "b.jsonl", threshold="info")
    for i in range(10_000):
        sink.emit(LogRecord("info", "seq", 0, i, peer_id=i % 7, payload={"i": i}))
    sink.close()
    lines = (tmp_path / "b.jsonl").read_text().splitlines()
    assert len(lines) == 10_000
    per_peer = {}
    for line in lines:
        doc = json.loads(line)
        per_peer.setdefault(doc["peer"], []).append(doc["payload"]["i"])
    for seq in per_peer.values():
        assert seq == sorted(seq)


def test_sink_write_failures_counted_not_raised(tmp_path):
    sink = JsonlSink(tmp_path / "c.jsonl", threshold="info")
    sink._fh.close()  # simulate a failing disk under the sink
    sink.emit(LogRecord("info", "x", 0, 0))
    sink.emit(LogRecord("info", "y", 0, 1))
    assert sink.write_failures == 2
    sink._fh = open(tmp_path / "c.jsonl", "a", encoding="utf-8")
    sink.close()


def test_metrics_record_emitted_per_test(tmp_path):
    cfg = make_config(testsPerRun=2, outputDir=str(tmp_path / "m"), **SMALL)
    run_experiment(cfg, workers=1)
    for i in range(2):
        lines = (tmp_path / "m" / f"test_{i}.jsonl").read_text().splitlines()
        metric_lines = [json.loads(l) for l in lines
                        if json.loads(l)["tag"] == "metrics"]
        assert len(metric_lines) == 1
        assert "utility" in metric_lines[0]["payload"]
