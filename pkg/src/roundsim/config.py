"""Experiment configuration: parsing, validation, topology, fault placement.

One JSON document describes one experiment and is shared verbatim by the
abstract and concrete execution modes.  Sweeps are handled at the CLI level
as a base document plus override lists; this module only knows single
experiments.

All functions here are pure over their inputs and safe to call from any
execution context.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

from .eventlog import LEVEL_NAMES

ALGORITHMS = ("bitcoin", "ethereum", "pbft", "raft", "abp", "sdl", "chord", "kademlia")
MODES = ("abstract", "concrete")
TOPOLOGY_KINDS = ("complete", "ring", "explicit")
DELAY_KINDS = ("deterministic", "uniform", "poisson")
FAULT_KINDS = ("crash", "equivocate", "parasite")
ROLES = ("leader", "follower")

MAX_SEED = 2**64 - 1


class ConfigError(Exception):
    """Base class for configuration problems."""


class ParseError(ConfigError):
    """Malformed document or schema violation; message names the key."""


class ValidationError(ConfigError):
    """Well-formed document with inconsistent values."""


class UnsupportedAlgorithmError(ConfigError):
    """Algorithm name outside the built-in suite."""


@dataclass(frozen=True)
class TopologySpec:
    kind: str = "complete"
    adjacency: Optional[tuple[tuple[int, tuple[int, ...]], ...]] = None
    directed: bool = False

    def to_doc(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"kind": self.kind}
        if self.adjacency is not None:
            doc["adjacency"] = [[pid, list(nbrs)] for pid, nbrs in self.adjacency]
        if self.directed:
            doc["directed"] = True
        return doc


@dataclass(frozen=True)
class ChannelSpec:
    delay_kind: str = "deterministic"
    delay_param: float = 1
    drop_probability: float = 0.0
    reorder_enabled: bool = False
    duplicate_probability: float = 0.0
    fifo: bool = True

    def to_doc(self) -> dict[str, Any]:
        return {
            "delayKind": self.delay_kind,
            "delayParam": self.delay_param,
            "dropProbability": self.drop_probability,
            "reorderEnabled": self.reorder_enabled,
            "duplicateProbability": self.duplicate_probability,
            "fifo": self.fifo,
        }


@dataclass(frozen=True)
class FaultAssignment:
    kind: str
    peers: Optional[tuple[int, ...]] = None  # explicit ids
    count: Optional[int] = None              # or this many random peers
    params: dict[str, Any] = field(default_factory=dict)

    def to_doc(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"kind": self.kind}
        if self.peers is not None:
            doc["peers"] = list(self.peers)
        else:
            doc["peers"] = {"count": self.count}
        if self.params:
            doc["params"] = dict(self.params)
        return doc

    def __eq__(self, other):
        if not isinstance(other, FaultAssignment):
            return NotImplemented
        return (self.kind, self.peers, self.count, self.params) == (
            other.kind, other.peers, other.count, other.params)


@dataclass(frozen=True)
class ConcreteSpec:
    role: str = "leader"
    leader_address: str = "127.0.0.1"
    leader_port: int = 9000
    process_count: int = 1

    def to_doc(self) -> dict[str, Any]:
        return {
            "role": self.role,
            "leaderAddress": self.leader_address,
            "leaderPort": self.leader_port,
            "processCount": self.process_count,
        }


@dataclass
class ExperimentConfig:
    algorithm: str
    peer_count: int
    rounds_per_test: int
    tests_per_run: int = 1
    base_seed: int = 0
    mode: str = "abstract"
    topology: TopologySpec = field(default_factory=TopologySpec)
    channel: ChannelSpec = field(default_factory=ChannelSpec)
    faults: tuple[FaultAssignment, ...] = ()
    algo_params: dict[str, Any] = field(default_factory=dict)
    log_level: str = "info"
    output_dir: str = "runs"
    concrete: Optional[ConcreteSpec] = None

    def to_doc(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "algorithm": self.algorithm,
            "mode": self.mode,
            "peerCount": self.peer_count,
            "roundsPerTest": self.rounds_per_test,
            "testsPerRun": self.tests_per_run,
            "baseSeed": self.base_seed,
            "topology": self.topology.to_doc(),
            "channel": self.channel.to_doc(),
            "faults": [f.to_doc() for f in self.faults],
            "algoParams": dict(self.algo_params),
            "logLevel": self.log_level,
            "outputDir": self.output_dir,
        }
        if self.concrete is not None:
            doc["concrete"] = self.concrete.to_doc()
        return doc

    def to_json(self, indent: Optional[int] = None) -> str:
        return json.dumps(self.to_doc(), indent=indent)

    def config_digest(self) -> str:
        """Digest over the run-defining parts of the config.

        Role, output directory, and log level vary legitimately between
        cooperating processes, so they are excluded.
        """
        import hashlib

        doc = self.to_doc()
        doc.pop("outputDir", None)
        doc.pop("logLevel", None)
        concrete = doc.get("concrete")
        if concrete:
            concrete.pop("role", None)
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# --------------------------------------------------------------------------
# Document parsing

def _err_key(key: str, why: str) -> ParseError:
    return ParseError(f"config key {key!r}: {why}")


def _get_bool(doc, key, default):
    v = doc.get(key, default)
    if not isinstance(v, bool):
        raise _err_key(key, "expected a boolean")
    return v


def _get_int(doc, key, default=None):
    v = doc.get(key, default)
    if v is None:
        raise _err_key(key, "required key missing")
    if isinstance(v, bool) or not isinstance(v, int):
        raise _err_key(key, "expected an integer")
    return v


def _get_number(doc, key, default=None):
    v = doc.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise _err_key(key, "expected a number")
    return v


def _get_str(doc, key, default=None):
    v = doc.get(key, default)
    if v is None:
        raise _err_key(key, "required key missing")
    if not isinstance(v, str):
        raise _err_key(key, "expected a string")
    return v


def _get_enum(doc, key, allowed, default=None):
    v = _get_str(doc, key, default)
    if v not in allowed:
        raise _err_key(key, f"expected one of {sorted(allowed)}, got {v!r}")
    return v


def _parse_adjacency(raw, key: str) -> tuple[tuple[int, tuple[int, ...]], ...]:
    if isinstance(raw, dict):
        items = []
        for pid, nbrs in raw.items():
            try:
                items.append([int(pid), nbrs])
            except (TypeError, ValueError):
                raise _err_key(key, f"bad peer id {pid!r}") from None
        raw = items
    if not isinstance(raw, list):
        raise _err_key(key, "expected an adjacency list")
    out = []
    for entry in raw:
        if not (isinstance(entry, list) and len(entry) == 2):
            raise _err_key(key, "each entry must be [peerId, [neighbors]]")
        pid, nbrs = entry
        if isinstance(pid, bool) or not isinstance(pid, int):
            raise _err_key(key, "peer id must be an integer")
        if not isinstance(nbrs, list) or any(
                isinstance(x, bool) or not isinstance(x, int) for x in nbrs):
            raise _err_key(key, "neighbor list must hold integers")
        out.append((pid, tuple(nbrs)))
    return tuple(out)


def _parse_topology(doc, base_dir: Optional[Path]) -> TopologySpec:
    known = {"kind", "adjacency", "directed"}
    for k in doc:
        if k not in known:
            raise _err_key(f"topology.{k}", "unknown key")
    kind = _get_enum(doc, "kind", TOPOLOGY_KINDS, "complete")
    adjacency = None
    if "adjacency" in doc:
        adjacency = _parse_adjacency(doc["adjacency"], "topology.adjacency")
    directed = _get_bool(doc, "directed", False)
    return TopologySpec(kind=kind, adjacency=adjacency, directed=directed)


def _parse_channel(doc) -> ChannelSpec:
    known = {"delayKind", "delayParam", "dropProbability", "reorderEnabled",
             "duplicateProbability", "fifo"}
    for k in doc:
        if k not in known:
            raise _err_key(f"channel.{k}", "unknown key")
    spec = ChannelSpec(
        delay_kind=_get_enum(doc, "delayKind", DELAY_KINDS, "deterministic"),
        delay_param=_get_number(doc, "delayParam", 1),
        drop_probability=_get_number(doc, "dropProbability", 0.0),
        reorder_enabled=_get_bool(doc, "reorderEnabled", False),
        duplicate_probability=_get_number(doc, "duplicateProbability", 0.0),
        fifo=_get_bool(doc, "fifo", True),
    )
    return spec


def _parse_fault(doc, index: int) -> FaultAssignment:
    key = f"faults[{index}]"
    if not isinstance(doc, dict):
        raise _err_key(key, "expected an object")
    known = {"kind", "peers", "count", "params"}
    for k in doc:
        if k not in known:
            raise _err_key(f"{key}.{k}", "unknown key")
    kind = _get_enum(doc, "kind", FAULT_KINDS)
    raw_peers = doc.get("peers")
    peers = count = None
    if raw_peers is None and "count" in doc:
        raw_peers = {"count": doc["count"]}  # shorthand for peers: {count: n}
    if isinstance(raw_peers, list):
        if any(isinstance(x, bool) or not isinstance(x, int) for x in raw_peers):
            raise _err_key(f"{key}.peers", "peer ids must be integers")
        peers = tuple(raw_peers)
    elif isinstance(raw_peers, dict):
        count = _get_int(raw_peers, "count")
        if set(raw_peers) != {"count"}:
            raise _err_key(f"{key}.peers", "expected {'count': n}")
    else:
        raise _err_key(f"{key}.peers", "expected an id list or {'count': n}")
    params = doc.get("params", {})
    if not isinstance(params, dict):
        raise _err_key(f"{key}.params", "expected an object")
    return FaultAssignment(kind=kind, peers=peers, count=count, params=dict(params))


def _parse_concrete(doc) -> ConcreteSpec:
    known = {"role", "leaderAddress", "leaderPort", "processCount"}
    for k in doc:
        if k not in known:
            raise _err_key(f"concrete.{k}", "unknown key")
    return ConcreteSpec(
        role=_get_enum(doc, "role", ROLES, "leader"),
        leader_address=_get_str(doc, "leaderAddress", "127.0.0.1"),
        leader_port=_get_int(doc, "leaderPort", 9000),
        process_count=_get_int(doc, "processCount", 1),
    )


TOP_LEVEL_KEYS = {
    "algorithm", "mode", "peerCount", "roundsPerTest", "testsPerRun", "baseSeed",
    "topology", "channel", "faults", "algoParams", "logLevel", "outputDir",
    "concrete", "topologyFile",
}


def parse_experiment(text: str, base_dir: Optional[str] = None) -> ExperimentConfig:
    """Parse and validate one experiment document.

    Unknown top-level keys are rejected; unknown algoParams keys are kept
    verbatim for the algorithm.  Returns a config with every default filled.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ParseError("top level: expected a JSON object")
    return parse_experiment_doc(doc, base_dir=base_dir)


def parse_experiment_doc(doc: dict[str, Any],
                         base_dir: Optional[str] = None) -> ExperimentConfig:
    for k in doc:
        if k not in TOP_LEVEL_KEYS:
            raise _err_key(k, "unknown top-level key")

    algorithm = _get_str(doc, "algorithm")
    if algorithm not in ALGORITHMS:
        raise UnsupportedAlgorithmError(
            f"unsupported algorithm {algorithm!r}; expected one of {list(ALGORITHMS)}")

    topo_doc = doc.get("topology", {"kind": "complete"})
    if not isinstance(topo_doc, dict):
        raise _err_key("topology", "expected an object")
    topology = _parse_topology(topo_doc, None)
    if "topologyFile" in doc:
        path = Path(_get_str(doc, "topologyFile"))
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise _err_key("topologyFile", f"cannot read {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise _err_key("topologyFile", f"invalid JSON: {exc}") from None
        topology = replace(topology, adjacency=_parse_adjacency(raw, "topologyFile"))

    chan_doc = doc.get("channel", {})
    if not isinstance(chan_doc, dict):
        raise _err_key("channel", "expected an object")

    faults_doc = doc.get("faults", [])
    if not isinstance(faults_doc, list):
        raise _err_key("faults", "expected a list")

    algo_params = doc.get("algoParams", {})
    if not isinstance(algo_params, dict):
        raise _err_key("algoParams", "expected an object")

    cfg = ExperimentConfig(
        algorithm=algorithm,
        mode=_get_enum(doc, "mode", MODES, "abstract"),
        peer_count=_get_int(doc, "peerCount"),
        rounds_per_test=_get_int(doc, "roundsPerTest"),
        tests_per_run=_get_int(doc, "testsPerRun", 1),
        base_seed=_get_int(doc, "baseSeed", 0),
        topology=topology,
        channel=_parse_channel(chan_doc),
        faults=tuple(_parse_fault(f, i) for i, f in enumerate(faults_doc)),
        algo_params=dict(algo_params),
        log_level=_get_enum(doc, "logLevel", LEVEL_NAMES, "info"),
        output_dir=_get_str(doc, "outputDir", "runs"),
        concrete=_parse_concrete(doc["concrete"]) if "concrete" in doc else None,
    )
    validate(cfg)
    return cfg


def load_experiment(path: str) -> ExperimentConfig:
    p = Path(path)
    return parse_experiment(p.read_text(encoding="utf-8"), base_dir=str(p.parent))


# --------------------------------------------------------------------------
# Validation

def _validate_probability(value, key):
    if not 0.0 <= value <= 1.0:
        raise ValidationError(f"{key} must lie in [0,1], got {value}")


def validate(cfg: ExperimentConfig) -> None:
    """Check invariants and fill algorithm defaults in place."""
    from . import algorithms  # late import; registry needs no config types

    if cfg.peer_count < 2:
        raise ValidationError(f"peerCount must be >= 2, got {cfg.peer_count}")
    if cfg.rounds_per_test < 1:
        raise ValidationError("roundsPerTest must be >= 1")
    if cfg.tests_per_run < 1:
        raise ValidationError("testsPerRun must be >= 1")
    if not 0 <= cfg.base_seed <= MAX_SEED:
        raise ValidationError("baseSeed must fit in 64 unsigned bits")

    ch = cfg.channel
    _validate_probability(ch.drop_probability, "channel.dropProbability")
    _validate_probability(ch.duplicate_probability, "channel.duplicateProbability")
    if ch.delay_param < 1:
        raise ValidationError("channel.delayParam must be >= 1")
    if ch.delay_kind in ("deterministic", "uniform") and ch.delay_param != int(ch.delay_param):
        raise ValidationError(f"channel.delayParam must be integral for {ch.delay_kind} delays")
    if ch.reorder_enabled and ch.fifo:
        # Reordering is realized as non-FIFO delivery; the flag wins.
        cfg.channel = replace(ch, fifo=False)

    if cfg.topology.kind == "explicit":
        if cfg.topology.adjacency is None:
            raise ValidationError("explicit topology requires an adjacency list")
        build_topology(cfg.topology, cfg.peer_count)
    elif cfg.topology.adjacency is not None:
        raise ValidationError("adjacency only applies to explicit topologies")

    taken: set[int] = set()
    for i, fa in enumerate(cfg.faults):
        if fa.peers is not None:
            for pid in fa.peers:
                if not 0 <= pid < cfg.peer_count:
                    raise ValidationError(
                        f"faults[{i}] references peer {pid} outside 0..{cfg.peer_count - 1}")
            if len(set(fa.peers)) != len(fa.peers):
                raise ValidationError(f"faults[{i}] lists a peer twice")
            if fa.kind == "parasite" and len(fa.peers) < 1:
                raise ValidationError(f"faults[{i}]: parasite coalition must be nonempty")
            taken.update(fa.peers)
        else:
            if fa.count is None or fa.count < 0:
                raise ValidationError(f"faults[{i}].peers.count must be >= 0")
            if fa.kind == "parasite" and fa.count < 1:
                raise ValidationError(f"faults[{i}]: parasite coalition must be nonempty")
        crash_round = fa.params.get("crashRound")
        recover_round = fa.params.get("recoverRound")
        if crash_round is not None and recover_round is not None:
            if crash_round > recover_round:
                raise ValidationError(
                    f"faults[{i}]: crashRound {crash_round} > recoverRound {recover_round}")
    total_explicit = sum(len(fa.peers) for fa in cfg.faults if fa.peers is not None)
    total_random = sum(fa.count for fa in cfg.faults if fa.peers is None)
    if len(taken) + total_random > cfg.peer_count or len(taken) != total_explicit:
        raise ValidationError("fault assignments target more peers than exist or overlap")

    if cfg.mode == "concrete":
        if cfg.concrete is None:
            cfg.concrete = ConcreteSpec()
        if cfg.concrete.process_count < 1:
            raise ValidationError("concrete.processCount must be >= 1")
        if not 0 < cfg.concrete.leader_port < 65536:
            raise ValidationError("concrete.leaderPort must be a TCP port")
        if cfg.concrete.process_count > cfg.peer_count:
            raise ValidationError("concrete.processCount must not exceed peerCount")

    algorithms.validate_algo_config(cfg)

    merged = algorithms.default_algo_params(cfg.algorithm, cfg.peer_count)
    merged.update(cfg.algo_params)
    cfg.algo_params = merged

    override = algorithms.channel_override(cfg.algorithm, cfg.algo_params)
    if override is not None:
        cfg.channel = _parse_channel(override)
        if cfg.channel.reorder_enabled and cfg.channel.fifo:
            cfg.channel = replace(cfg.channel, fifo=False)


# --------------------------------------------------------------------------
# Topology

def build_topology(spec: TopologySpec, n: int) -> dict[int, list[int]]:
    """Adjacency map peer id -> ascending neighbor list."""
    if n < 2:
        raise ValidationError("topology needs at least 2 peers")
    if spec.kind == "complete":
        return {i: [j for j in range(n) if j != i] for i in range(n)}
    if spec.kind == "ring":
        return {i: sorted({(i - 1) % n, (i + 1) % n} - {i}) for i in range(n)}

    assert spec.kind == "explicit"
    if spec.adjacency is None:
        raise ValidationError("explicit topology requires an adjacency list")
    adj: dict[int, set[int]] = {i: set() for i in range(n)}
    for pid, nbrs in spec.adjacency:
        if not 0 <= pid < n:
            raise ValidationError(f"topology references peer {pid} outside 0..{n - 1}")
        for nb in nbrs:
            if not 0 <= nb < n:
                raise ValidationError(f"topology references peer {nb} outside 0..{n - 1}")
            if nb == pid:
                raise ValidationError(f"topology has a self-loop at peer {pid}")
            adj[pid].add(nb)
    if not spec.directed:
        for a in range(n):
            for b in adj[a]:
                if a not in adj[b]:
                    raise ValidationError(
                        f"topology edge {a}->{b} has no reverse edge; "
                        "set directed=true for one-way links")
    return {i: sorted(adj[i]) for i in range(n)}


def adjacency_to_spec(adj: dict[int, list[int]], directed: bool = False) -> TopologySpec:
    pairs = tuple((pid, tuple(sorted(nbrs))) for pid, nbrs in sorted(adj.items()))
    return TopologySpec(kind="explicit", adjacency=pairs, directed=directed)


# --------------------------------------------------------------------------
# Fault placement

@dataclass(frozen=True)
class ResolvedFault:
    kind: str
    params: dict[str, Any]
    group: tuple[int, ...]  # all peers sharing this assignment (coalition view)


def expand_fault_assignments(cfg: ExperimentConfig, rng) -> dict[int, ResolvedFault]:
    """Resolve count-of-random-peers assignments to concrete peer ids.

    Random ids are drawn without replacement from the peers not yet claimed
    by an earlier assignment, using the dedicated fault-placement stream.
    At most one fault per peer; explicit overlaps are conflicts.
    """
    assigned: dict[int, ResolvedFault] = {}
    for i, fa in enumerate(cfg.faults):
        if fa.peers is not None:
            ids = list(fa.peers)
            for pid in ids:
                if pid in assigned:
                    raise ValidationError(
                        f"faults[{i}] targets peer {pid} already claimed by another fault")
        else:
            free = sorted(set(range(cfg.peer_count)) - set(assigned))
            if fa.count > len(free):
                raise ValidationError(
                    f"faults[{i}] wants {fa.count} random peers, only {len(free)} free")
            ids = sorted(rng.sample(free, fa.count))
        group = tuple(sorted(ids))
        resolved = ResolvedFault(kind=fa.kind, params=dict(fa.params), group=group)
        for pid in ids:
            assigned[pid] = resolved
    return assigned


# --------------------------------------------------------------------------
# Override helper (CLI --override K=V, dotted paths)

def apply_override(doc: dict[str, Any], path: str, value: Any) -> None:
    """Set a dotted path inside a raw config document.

    List nodes accept numeric segments; a non-numeric segment on a
    single-element list descends into that element.
    """
    parts = path.split(".")
    node: Any = doc
    for idx, part in enumerate(parts[:-1]):
        node = _descend(node, part, path)
        if node is None:
            raise ParseError(f"override path {path!r}: {part!r} not found")
    last = parts[-1]
    if isinstance(node, list):
        if last.isdigit():
            node[int(last)] = value
            return
        if len(node) == 1 and isinstance(node[0], dict):
            node[0][last] = value
            return
        raise ParseError(f"override path {path!r}: list index expected")
    if not isinstance(node, dict):
        raise ParseError(f"override path {path!r}: cannot descend into a scalar")
    node[last] = value


def _descend(node, part, path):
    if isinstance(node, list):
        if part.isdigit():
            i = int(part)
            if i >= len(node):
                raise ParseError(f"override path {path!r}: index {i} out of range")
            return node[i]
        if len(node) == 1:
            node = node[0]
        else:
            raise ParseError(f"override path {path!r}: list index expected at {part!r}")
    if isinstance(node, dict):
        if part not in node:
            node[part] = {}
        return node[part]
    raise ParseError(f"override path {path!r}: cannot descend into a scalar at {part!r}")


def parse_override_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text
