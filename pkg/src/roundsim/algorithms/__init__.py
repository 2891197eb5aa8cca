"""Registry binding algorithm names to their peer factories, parameter
defaults, topology builders, and metric finalizers.  The engine talks to
algorithms only through this surface and never interprets their metrics."""

from __future__ import annotations

from typing import Any, Optional

from .blockchain import BlockchainFamily
from .consensus import PbftFamily, RaftFamily
from .datalink import DatalinkFamily
from .dht import DhtFamily

FAMILIES = {
    "bitcoin": BlockchainFamily("bitcoin"),
    "ethereum": BlockchainFamily("ethereum"),
    "pbft": PbftFamily(),
    "raft": RaftFamily(),
    "abp": DatalinkFamily("abp"),
    "sdl": DatalinkFamily("sdl"),
    "chord": DhtFamily("chord"),
    "kademlia": DhtFamily("kademlia"),
}


def family(algorithm: str):
    return FAMILIES[algorithm]


def default_algo_params(algorithm: str, peer_count: int) -> dict[str, Any]:
    return family(algorithm).defaults(peer_count)


def validate_algo_config(cfg) -> None:
    family(cfg.algorithm).validate(cfg)


def channel_override(algorithm: str, algo_params: dict[str, Any]) -> Optional[dict]:
    return family(algorithm).channel_override(algo_params)


def equivocation_defaults(algorithm: str) -> dict[str, Any]:
    return family(algorithm).equivocation()


def make_peers(cfg, ids) -> dict[int, Any]:
    return family(cfg.algorithm).make_peers(cfg, ids)


def topology_override(cfg, test_index: int) -> Optional[dict[int, list[int]]]:
    return family(cfg.algorithm).topology(cfg, test_index)


def make_extras(cfg, test_index: int, adjacency) -> dict[int, dict]:
    return family(cfg.algorithm).extras(cfg, test_index, adjacency)


def finalize_metrics(cfg, per_peer_metrics, channel_stats) -> dict[str, float]:
    return family(cfg.algorithm).finalize(cfg, per_peer_metrics, channel_stats)
