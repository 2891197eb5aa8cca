"""Deterministic per-entity seed derivation.

Every random decision in a simulation draws from a stream owned by exactly
one entity (a peer, a channel, the fault-placement step, or the engine
itself).  Streams are derived from the experiment's base seed by mixing the
entity coordinates through a keyed hash, so distinct entities get
independent streams and reruns reproduce them exactly.
"""

from __future__ import annotations

import hashlib
import random

ENTITY_KINDS = ("peer", "channel", "faultPlacement", "engine")


def _encode(part) -> bytes:
    if isinstance(part, (tuple, list)):
        body = b"".join(_encode(p) for p in part)
        return b"(" + body + b")"
    return repr(part).encode("utf-8") + b";"


def derive_seed(base_seed: int, test_index: int, entity_kind: str, entity_id) -> int:
    """Mix (baseSeed, testIndex, entityKind, entityId) into a 64-bit seed.

    Pure function: the same tuple always yields the same seed, independent
    of interpreter hash randomization.
    """
    if entity_kind not in ENTITY_KINDS:
        raise ValueError(f"unknown entity kind: {entity_kind!r}")
    h = hashlib.blake2b(digest_size=8, key=b"roundsim.stream")
    h.update(base_seed.to_bytes(8, "big", signed=False))
    h.update(test_index.to_bytes(8, "big", signed=False))
    h.update(entity_kind.encode("ascii"))
    h.update(_encode(entity_id))
    return int.from_bytes(h.digest(), "big")


def make_rng(base_seed: int, test_index: int, entity_kind: str, entity_id) -> random.Random:
    """A fresh RNG seeded from the derived stream seed."""
    return random.Random(derive_seed(base_seed, test_index, entity_kind, entity_id))
