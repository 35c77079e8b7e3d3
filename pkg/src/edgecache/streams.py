"""Keyed random sub-streams.

Every consumer of randomness (one user's demand for one item, one cache's
policy draws for one item, one item's broadcast process) gets its own
counter-based Philox stream keyed by ``(root, kind, a, b)``.  Adding an item
or a user never shifts the draws seen by any other pair, which keeps A/B
comparisons between policies on a common seed exact.
"""

from __future__ import annotations

import math

import numpy as np

DEMAND = 1
POLICY = 2
BROADCAST = 3
INIT = 4
REPLICA = 5

BLOCK = 32
# Philox emits 4 uint64 per counter step; one double consumes one uint64.
_STEPS_PER_BLOCK = BLOCK // 4

_MASK28 = (1 << 28) - 1


def root_key(seed: int) -> int:
    """Hash a user-facing seed into a 64-bit Philox key word."""
    return int(np.random.SeedSequence(int(seed)).generate_state(1, np.uint64)[0])


def _key(root: int, kind: int, a: int, b: int) -> list[int]:
    if a > _MASK28 or b > _MASK28:
        raise ValueError("stream index exceeds 2**28")
    return [root, (kind << 56) | (a << 28) | b]


def generator(root: int, kind: int, a: int = 0, b: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=_key(root, kind, a, b)))


def uniform_block(root: int, kind: int, a: int, b: int, block: int) -> list[float]:
    """The ``block``-th run of BLOCK uniforms of stream (kind, a, b)."""
    bg = np.random.Philox(key=_key(root, kind, a, b), counter=[block * _STEPS_PER_BLOCK, 0, 0, 0])
    return np.random.Generator(bg).random(BLOCK).tolist()


class UniformStream:
    """Lazily refilled uniform draws for one keyed stream."""

    __slots__ = ("root", "kind", "a", "b", "_block", "_buf", "_pos")

    def __init__(self, root: int, kind: int, a: int, b: int) -> None:
        self.root = root
        self.kind = kind
        self.a = a
        self.b = b
        self._block = 0
        self._buf: list[float] = []
        self._pos = 0

    def random(self) -> float:
        if self._pos == len(self._buf):
            self._buf = uniform_block(self.root, self.kind, self.a, self.b, self._block)
            self._block += 1
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u

    def standard_exponential(self) -> float:
        return -math.log1p(-self.random())


def spawn_seeds(seed: int, n: int) -> list[int]:
    """Independent integer seeds for ``n`` replications of one root seed."""
    children = np.random.SeedSequence(int(seed)).spawn(n)
    return [int(c.generate_state(1, np.uint32)[0]) for c in children]
