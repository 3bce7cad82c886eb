"""Seeded random streams.

Every stochastic component draws from numpy's PCG64 bit generator seeded
through a SeedSequence. Streams are keyed by (seed, node index) and then
split into named children, so adding a consumer never shifts the numbers
another consumer sees.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GENERATOR_NAME = "numpy.random.PCG64 via SeedSequence(seed, spawn_key=(node,))"

_STREAM_NAMES = ("init", "transitions", "policy", "forecast")
_SCHEDULER_KEY = 2**31 - 1
_REPLICA_KEY = 2**31 - 2


def _generator(ss: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(ss))


@dataclass
class NodeStreams:
    init: np.random.Generator
    transitions: np.random.Generator
    policy: np.random.Generator
    forecast: np.random.Generator


def node_streams(seed: int, node: int = 0) -> NodeStreams:
    children = np.random.SeedSequence(int(seed), spawn_key=(int(node),)).spawn(len(_STREAM_NAMES))
    return NodeStreams(*(_generator(c) for c in children))


def scheduler_stream(seed: int) -> np.random.Generator:
    return _generator(np.random.SeedSequence(int(seed), spawn_key=(_SCHEDULER_KEY,)))


def generator(seed: int) -> np.random.Generator:
    """Plain generator for a single-purpose draw (e.g. workload generation)."""
    return _generator(np.random.SeedSequence(int(seed)))


def replica_seeds(seed: int, count: int) -> list[int]:
    """Independent 63-bit seeds for `count` replicas derived from `seed`."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(_REPLICA_KEY,))
    words = ss.generate_state(count, dtype=np.uint64)
    return [int(w >> np.uint64(1)) for w in words]
