"""Deterministic random streams.

Every random draw in the package comes from a stream keyed by
``(master seed, experiment tag, replica, scale)``. Streams are built with
:class:`numpy.random.SeedSequence` spawn keys, so they are statistically
independent and do not depend on how jobs are scheduled across threads.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

# scale slot used by streams that are not tied to a field scale
NO_SCALE = 2**31 - 1


def tag_id(tag: str) -> int:
    """Stable 32-bit integer for an experiment/purpose tag."""
    return int.from_bytes(hashlib.sha256(tag.encode("utf-8")).digest()[:4], "little")


@dataclass(frozen=True)
class RngSeed:
    master: int
    replica: int = 0
    scale: int = NO_SCALE
    tag: str = ""

    def __post_init__(self):
        if not 0 <= self.master < 2**64:
            raise ValueError("master seed must be a 64-bit unsigned integer")
        if self.replica < 0 or self.scale < 0:
            raise ValueError("stream ids must be non-negative")

    def with_scale(self, j: int) -> "RngSeed":
        return RngSeed(self.master, self.replica, j, self.tag)

    def with_replica(self, i: int) -> "RngSeed":
        return RngSeed(self.master, i, self.scale, self.tag)

    def with_tag(self, tag: str) -> "RngSeed":
        return RngSeed(self.master, self.replica, self.scale, tag)

    def nested(self, i: int) -> "RngSeed":
        """Stream ``i`` one level below this one; the current replica moves into the tag."""
        return RngSeed(self.master, i, self.scale, f"{self.tag}.{self.replica}")

    def sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(
            entropy=self.master, spawn_key=(tag_id(self.tag), self.replica, self.scale)
        )

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.sequence()))

    def substream(self, i: int) -> np.random.Generator:
        """Generator for block ``i`` of this stream (e.g. a chunk of paths)."""
        seq = np.random.SeedSequence(
            entropy=self.master, spawn_key=(tag_id(self.tag), self.replica, self.scale, i)
        )
        return np.random.Generator(np.random.PCG64(seq))


def as_seed(seed: "RngSeed | int", tag: str = "") -> RngSeed:
    if isinstance(seed, RngSeed):
        return seed
    return RngSeed(int(seed), tag=tag)
