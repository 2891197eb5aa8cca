import json

import pytest
from hypothesis import given, settings, strategies as st

from roundsim.config import (ExperimentConfig, ParseError, TopologySpec,
                             UnsupportedAlgorithmError, ValidationError,
                             apply_override, build_topology,
                             expand_fault_assignments, parse_experiment,
                             parse_experiment_doc, parse_override_value)
from roundsim.seeds import make_rng

MINIMAL = {"algorithm": "abp", "peerCount": 2, "roundsPerTest": 200, "testsPerRun": 10}


def test_minimal_document_fills_defaults():
    cfg = parse_experiment(json.dumps(MINIMAL))
    assert cfg.algorithm == "abp"
    assert cfg.rounds_per_test == 200
    assert cfg.tests_per_run == 10
    assert cfg.channel.fifo is True
    assert cfg.channel.drop_probability == 0
    assert cfg.channel.duplicate_probability == 0
    assert cfg.channel.reorder_enabled is False
    assert cfg.log_level == "info"
    assert cfg.algo_params["timeoutRounds"] == 3


def test_omitted_drop_probability_defaults_to_zero():
    doc = dict(MINIMAL, channel={"delayKind": "uniform", "delayParam": 3})
    cfg = parse_experiment(json.dumps(doc))
    assert cfg.channel.drop_probability == 0


def test_fault_referencing_out_of_range_peer():
    doc = {"algorithm": "pbft", "peerCount": 21, "roundsPerTest": 10,
           "faults": [{"kind": "crash", "peers": [99]}]}
    with pytest.raises(ValidationError):
        parse_experiment(json.dumps(doc))


def test_unknown_algorithm():
    with pytest.raises(UnsupportedAlgorithmError):
        parse_experiment(json.dumps(dict(MINIMAL, algorithm="paxos")))


def test_unknown_top_level_key_named_in_error():
    with pytest.raises(ParseError, match="bogusKey"):
        parse_experiment(json.dumps(dict(MINIMAL, bogusKey=1)))


def test_unknown_algo_params_preserved():
    doc = dict(MINIMAL, algoParams={"myCustomKnob": [1, 2, 3]})
    cfg = parse_experiment(json.dumps(doc))
    assert cfg.algo_params["myCustomKnob"] == [1, 2, 3]


def test_bad_probability_rejected():
    doc = dict(MINIMAL, channel={"dropProbability": 1.5})
    with pytest.raises(ValidationError):
        parse_experiment(json.dumps(doc))


def test_crash_window_ordering_validated():
    doc = {"algorithm": "raft", "peerCount": 5, "roundsPerTest": 10,
           "faults": [{"kind": "crash", "peers": [1],
                       "params": {"crashRound": 9, "recoverRound": 3}}]}
    with pytest.raises(ValidationError):
        parse_experiment(json.dumps(doc))


def test_reorder_implies_non_fifo():
    doc = dict(MINIMAL, algorithm="sdl",
               channel={"reorderEnabled": True, "fifo": True})
    cfg = parse_experiment(json.dumps(doc))
    assert cfg.channel.fifo is False


def test_round_trip_stability():
    doc = {"algorithm": "pbft", "peerCount": 19, "roundsPerTest": 500,
           "testsPerRun": 10, "baseSeed": 123,
           "channel": {"delayKind": "uniform", "delayParam": 3},
           "faults": [{"kind": "equivocate", "peers": {"count": 6}}],
           "algoParams": {"timeoutRounds": 25, "extra": {"a": 1}},
           "concrete": {"role": "leader", "processCount": 2}}
    cfg1 = parse_experiment(json.dumps(doc))
    cfg2 = parse_experiment(cfg1.to_json())
    assert cfg1 == cfg2
    assert cfg2.to_doc() == cfg1.to_doc()


# -- topology ---------------------------------------------------------------

def test_complete_topology_12_peers():
    adj = build_topology(TopologySpec(kind="complete"), 12)
    assert all(len(neighbors) == 11 for neighbors in adj.values())


def test_ring_topology_neighbors():
    adj = build_topology(TopologySpec(kind="ring"), 4)
    assert adj[0] == [1, 3]


def test_complete_three_peers():
    adj = build_topology(TopologySpec(kind="complete"), 3)
    assert adj == {0: [1, 2], 1: [0, 2], 2: [0, 1]}


@given(st.integers(min_value=2, max_value=64))
@settings(max_examples=63, deadline=None)
def test_complete_edge_count(n):
    adj = build_topology(TopologySpec(kind="complete"), n)
    edges = {frozenset((a, b)) for a, nbrs in adj.items() for b in nbrs}
    assert len(edges) == n * (n - 1) // 2


def test_explicit_asymmetric_rejected_unless_directed():
    spec = TopologySpec(kind="explicit", adjacency=((0, (1,)), (1, ())))
    with pytest.raises(ValidationError):
        build_topology(spec, 2)
    directed = TopologySpec(kind="explicit", adjacency=((0, (1,)), (1, ())),
                            directed=True)
    assert build_topology(directed, 2) == {0: [1], 1: []}


def test_explicit_self_loop_rejected():
    spec = TopologySpec(kind="explicit", adjacency=((0, (0,)),))
    with pytest.raises(ValidationError):
        build_topology(spec, 2)


def test_topology_file_loading(tmp_path):
    topo = tmp_path / "ring2.json"
    topo.write_text(json.dumps([[0, [1]], [1, [0]]]))
    doc = dict(MINIMAL, topology={"kind": "explicit"}, topologyFile="ring2.json")
    (tmp_path / "exp.json").write_text(json.dumps(doc))
    from roundsim.config import load_experiment

    cfg = load_experiment(str(tmp_path / "exp.json"))
    assert cfg.topology.adjacency == ((0, (1,)), (1, (0,)))


# -- fault expansion -----------------------------------------------------------

def _cfg_with_faults(n, faults, algorithm="pbft"):
    return parse_experiment(json.dumps(
        {"algorithm": algorithm, "peerCount": n, "roundsPerTest": 5,
         "faults": faults}))


def test_explicit_fault_passthrough():
    cfg = _cfg_with_faults(12, [{"kind": "parasite", "peers": [0, 1]}],
                           algorithm="bitcoin")
    resolved = expand_fault_assignments(cfg, make_rng(1, 0, "faultPlacement", 0))
    assert set(resolved) == {0, 1}
    assert all(r.kind == "parasite" and r.group == (0, 1) for r in resolved.values())


def test_random_fault_count_distinct_ids():
    cfg = _cfg_with_faults(19, [{"kind": "equivocate", "peers": {"count": 6}}])
    resolved = expand_fault_assignments(cfg, make_rng(1, 0, "faultPlacement", 0))
    assert len(resolved) == 6
    assert all(0 <= pid < 19 for pid in resolved)


def test_zero_count_yields_empty_map():
    cfg = _cfg_with_faults(5, [{"kind": "crash", "peers": {"count": 0}}],
                           algorithm="raft")
    assert expand_fault_assignments(cfg, make_rng(1, 0, "faultPlacement", 0)) == {}


def test_same_seed_same_placement():
    cfg = _cfg_with_faults(19, [{"kind": "equivocate", "peers": {"count": 6}}])
    a = expand_fault_assignments(cfg, make_rng(9, 3, "faultPlacement", 0))
    b = expand_fault_assignments(cfg, make_rng(9, 3, "faultPlacement", 0))
    assert set(a) == set(b)


def test_conflicting_explicit_assignments_rejected():
    with pytest.raises(ValidationError):
        _cfg_with_faults(12, [{"kind": "crash", "peers": [3]},
                              {"kind": "equivocate", "peers": [3]}])


def test_expansion_conflict_raises_without_prevalidation():
    from roundsim.config import FaultAssignment

    cfg = _cfg_with_faults(12, [{"kind": "crash", "peers": [3]}])
    cfg.faults = (FaultAssignment(kind="crash", peers=(3,)),
                  FaultAssignment(kind="equivocate", peers=(3,)))
    with pytest.raises(ValidationError):
        expand_fault_assignments(cfg, make_rng(1, 0, "faultPlacement", 0))


def test_count_shorthand_matches_peers_count():
    a = _cfg_with_faults(19, [{"kind": "equivocate", "count": 6}])
    b = _cfg_with_faults(19, [{"kind": "equivocate", "peers": {"count": 6}}])
    assert a.faults == b.faults


# -- overrides -----------------------------------------------------------------

def test_override_equivalent_to_editing_file():
    base = dict(MINIMAL)
    edited = dict(MINIMAL, baseSeed=99)
    overridden = json.loads(json.dumps(base))
    apply_override(overridden, "baseSeed", 99)
    assert parse_experiment_doc(overridden) == parse_experiment_doc(edited)


def test_override_descends_single_element_list():
    doc = {"faults": [{"kind": "equivocate", "peers": {"count": 1}}]}
    apply_override(doc, "faults.count", 6)
    assert doc["faults"][0]["count"] == 6


def test_override_value_parsing():
    assert parse_override_value("6") == 6
    assert parse_override_value("0.25") == 0.25
    assert parse_override_value("true") is True
    assert parse_override_value("[1,2]") == [1, 2]
    assert parse_override_value("leader") == "leader"


# -- datalink channel mapping ---------------------------------------------------

def test_adversity_level_delay_series():
    doc = dict(MINIMAL, algoParams={"adversityLevel": 6, "series": "delay"})
    cfg = parse_experiment(json.dumps(doc))
    assert cfg.channel.delay_kind == "uniform"
    assert cfg.channel.delay_param == 6
    assert cfg.channel.drop_probability == 0


def test_adversity_level_drop_series():
    doc = dict(MINIMAL, algoParams={"adversityLevel": 6, "series": "drop"})
    cfg = parse_experiment(json.dumps(doc))
    assert cfg.channel.delay_kind == "deterministic"
    assert cfg.channel.delay_param == 1
    assert cfg.channel.drop_probability == 0.4


def test_datalink_requires_two_peers():
    with pytest.raises(ValidationError):
        parse_experiment(json.dumps(dict(MINIMAL, peerCount=3)))


def test_mining_rate_cap_validated():
    doc = {"algorithm": "bitcoin", "peerCount": 3, "roundsPerTest": 5,
           "algoParams": {"miningRates": [30, 1, 1], "baseProbability": 0.05}}
    with pytest.raises(ValidationError):
        parse_experiment(json.dumps(doc))
