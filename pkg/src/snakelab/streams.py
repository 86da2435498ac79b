"""Deterministic splittable random streams.

A stream is identified by a root seed plus a path of split indices.  The
identity is hashed (SHA-256) into generator keys, so any two distinct paths
yield statistically unrelated substreams and the same path always reproduces
the same draws, independent of platform or call order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

__all__ = ["RandomStream", "new_stream"]

_MAX_PATH_DEPTH = 64


def _digest(seed: int, path: tuple[int, ...], tag: str) -> bytes:
    text = "snakelab:%d:%s:%s" % (seed, "/".join(str(i) for i in path), tag)
    return hashlib.sha256(text.encode("ascii")).digest()


@dataclass(frozen=True)
class RandomStream:
    """Immutable handle for one substream of randomness.

    ``split`` derives child streams; drawing and splitting never mutate the
    parent, so samplers that consume a stream stay pure functions of it.
    """

    seed: int
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if not isinstance(self.seed, int):
            raise TypeError("seed must be an int")
        if len(self.path) > _MAX_PATH_DEPTH:
            raise ValueError("split depth limit exceeded")

    def split(self, index: int) -> "RandomStream":
        """Child stream with one more path component."""
        if index < 0:
            raise ValueError("split index must be nonnegative")
        return RandomStream(self.seed, self.path + (index,))

    def key64(self, tag: str = "") -> np.uint64:
        """64-bit key for counter-based kernels, salted by ``tag``."""
        raw = _digest(self.seed, self.path, tag)
        return np.uint64(int.from_bytes(raw[:8], "little"))

    def generator(self, tag: str = "") -> np.random.Generator:
        """numpy Generator over a Philox counter engine keyed to this stream."""
        raw = _digest(self.seed, self.path, tag)
        key = int.from_bytes(raw[:16], "little")
        return np.random.Generator(np.random.Philox(key=key))


def new_stream(seed: int) -> RandomStream:
    """Root stream for a run. Equal seeds give byte-identical histories."""
    return RandomStream(int(seed))
