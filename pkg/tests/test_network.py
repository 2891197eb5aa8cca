import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from roundsim.config import ChannelSpec
from roundsim.network import Channel, NodeInterface, sample_delay


def make_channel(fifo=True, drop=0.0, dup=0.0, reorder=False,
                 delay_kind="deterministic", delay_param=1, seed=1):
    spec = ChannelSpec(delay_kind=delay_kind, delay_param=delay_param,
                       drop_probability=drop, duplicate_probability=dup,
                       reorder_enabled=reorder, fifo=fifo)
    return Channel(0, 1, spec, random.Random(seed), random.Random(seed + 1))


# -- delay sampling ---------------------------------------------------------

def test_deterministic_delay_is_exact():
    spec = ChannelSpec(delay_kind="deterministic", delay_param=1)
    assert sample_delay(spec, random.Random(0)) == 1
    spec = ChannelSpec(delay_kind="deterministic", delay_param=4)
    assert sample_delay(spec, random.Random(0)) == 4


def test_uniform_delay_within_bounds():
    spec = ChannelSpec(delay_kind="uniform", delay_param=6)
    rng = random.Random(3)
    draws = [sample_delay(spec, rng) for _ in range(5000)]
    assert set(draws) == {1, 2, 3, 4, 5, 6}


def test_poisson_delay_mean_within_3_sigma():
    spec = ChannelSpec(delay_kind="poisson", delay_param=3)
    rng = random.Random(7)
    n = 100_000
    draws = [sample_delay(spec, rng) for _ in range(n)]
    assert min(draws) >= 1
    mean = sum(draws) / n
    sigma = math.sqrt(2.0 / n)  # delay = 1 + Poisson(2)
    assert abs(mean - 3.0) <= 3 * sigma


# -- enqueue ------------------------------------------------------------------

def test_certain_drop_enqueues_nothing():
    ch = make_channel(drop=1.0)
    ch.enqueue({"x": 1}, 0)
    assert ch.in_transit == []
    assert ch.stats.dropped == 1


def test_certain_duplicate_doubles_in_transit():
    ch = make_channel(fifo=False, dup=1.0)
    for i in range(10):
        ch.enqueue({"i": i}, i)
    assert len(ch.in_transit) == 20
    assert ch.stats.duplicated == 10


def test_fifo_clamp_never_inverts_send_order():
    ch = make_channel(fifo=True, delay_kind="uniform", delay_param=5)
    for i in range(200):
        ch.enqueue(i, i // 4)
    deliveries = []
    for r in range(300):
        deliveries.extend(p.payload for p in ch.collect_deliverable(r))
    assert deliveries == sorted(deliveries)
    assert len(deliveries) == 200


def test_delivery_never_in_send_round():
    ch = make_channel(fifo=False, delay_kind="uniform", delay_param=3)
    for i in range(50):
        ch.enqueue(i, 7)
    assert all(p.delivery_round >= 8 for p in ch.in_transit)


# -- collect ---------------------------------------------------------------------

def test_collect_empty_channel():
    ch = make_channel()
    assert ch.collect_deliverable(5) == []


def test_boundary_delivery_round_included():
    ch = make_channel(delay_kind="deterministic", delay_param=2)
    ch.enqueue("m", 3)  # delivers at round 5
    assert ch.collect_deliverable(4) == []
    got = ch.collect_deliverable(5)
    assert [p.payload for p in got] == ["m"]


def test_reorder_shuffles_same_round_ties():
    orders = set()
    for seed in range(100):
        ch = make_channel(fifo=False, reorder=True, seed=seed)
        ch.enqueue("a", 0)
        ch.enqueue("b", 0)
        got = tuple(p.payload for p in ch.collect_deliverable(1))
        orders.add(got)
    assert ("a", "b") in orders and ("b", "a") in orders


def test_conservation_without_faults():
    ch = make_channel(fifo=True, delay_kind="uniform", delay_param=4)
    delivered = 0
    for r in range(100):
        ch.enqueue(r, r)
        delivered += len(ch.collect_deliverable(r))
    assert delivered + len(ch.in_transit) == ch.stats.sent == 100


def test_drop_statistics_within_3_sigma():
    p = 0.3
    n = 20_000
    ch = make_channel(fifo=False, drop=p)
    for i in range(n):
        ch.enqueue(i, 0)
    survived = len(ch.in_transit)
    sigma = math.sqrt(n * p * (1 - p))
    assert abs(survived - n * (1 - p)) <= 3 * sigma


@given(st.lists(st.integers(min_value=1, max_value=6), min_size=1, max_size=60),
       st.integers(min_value=0, max_value=2**32))
@settings(max_examples=60, deadline=None)
def test_fifo_property_random_delays(delays, seed):
    spec = ChannelSpec(delay_kind="uniform", delay_param=6, fifo=True)
    ch = Channel(0, 1, spec, random.Random(seed), random.Random(seed))
    for i, _ in enumerate(delays):
        ch.enqueue(i, i)
    out = []
    for r in range(len(delays) + 10):
        out.extend(p.payload for p in ch.collect_deliverable(r))
    assert out == sorted(out)


# -- peer-facing interface ---------------------------------------------------------

def collect_records():
    records = []
    return records, records.append


def test_broadcast_stages_one_message_per_neighbor():
    records, emit = collect_records()
    iface = NodeInterface(0, list(range(1, 12)), emit, 0)
    iface.begin_round(0, [])
    iface.broadcast({"kind": "x"})
    assert len(iface.outbox) == 11


def test_multicast_empty_set_is_noop():
    records, emit = collect_records()
    iface = NodeInterface(0, [1, 2], emit, 0)
    iface.begin_round(0, [])
    iface.multicast([], {"kind": "x"})
    assert iface.outbox == []


def test_unicast_to_non_neighbor_logs_routing_error():
    records, emit = collect_records()
    iface = NodeInterface(0, [1], emit, 0)
    iface.begin_round(0, [])
    iface.unicast(5, {"kind": "x"})
    assert iface.outbox == []
    assert any(r.tag == "routing-error" for r in records)


def test_receive_all_returns_once_per_round():
    records, emit = collect_records()
    iface = NodeInterface(0, [1], emit, 0)
    iface.begin_round(3, [(1, {"kind": "m"})])
    first = iface.receive_all()
    assert [msg["kind"] for _, msg in first] == ["m"]
    assert iface.receive_all() == []
    iface.begin_round(4, [(1, {"kind": "n"})])
    assert len(iface.receive_all()) == 1


def test_received_payloads_are_private_copies():
    records, emit = collect_records()
    shared = {"kind": "m", "body": [1, 2]}
    iface = NodeInterface(0, [1], emit, 0)
    iface.begin_round(0, [(1, shared)])
    (_, got), = iface.receive_all()
    got["body"].append(3)
    assert shared["body"] == [1, 2]
