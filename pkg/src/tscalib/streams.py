"""Named, counter-based random streams.

Every draw is a pure function of ``(seed, stream name, draw index)``: the seed and
name are hashed into a 128-bit Philox key and the draw index addresses the Philox
counter. Results therefore never depend on thread scheduling or on how many other
streams were used before.
"""

from __future__ import annotations

import hashlib

import numpy as np
from scipy import special

_RAW_PER_BLOCK = 4  # Philox4x64 emits four 64-bit words per counter increment


def _key(seed, name: tuple) -> int:
    h = hashlib.blake2b(repr((seed,) + tuple(name)).encode(), digest_size=16)
    return int.from_bytes(h.digest(), "little")


class RandomStream:
    """Sequential reader over one named stream."""

    def __init__(self, seed, *name, start: int = 0):
        self.seed = seed
        self.name = tuple(name)
        self._key = _key(seed, self.name)
        self._bitgen = np.random.Philox(key=self._key)
        block, offset = divmod(start, _RAW_PER_BLOCK)
        if block:
            self._bitgen.advance(block)
        if offset:
            self._bitgen.random_raw(offset)
        self.position = start

    def raw(self, n: int) -> np.ndarray:
        out = self._bitgen.random_raw(n)
        self.position += n
        return out

    def uniform(self, size=None) -> np.ndarray | float:
        """Uniform draws on the open interval (0, 1)."""
        n = 1 if size is None else int(np.prod(size))
        u = ((self.raw(n) >> np.uint64(11)).astype(float) + 0.5) * 2.0**-53
        return float(u[0]) if size is None else u.reshape(size)

    def normal(self, size=None):
        return special.ndtri(self.uniform(size))

    def student_t(self, df: float, size=None):
        return special.stdtrit(df, self.uniform(size))


class StreamFamily:
    """Factory for named streams under one seed; ``child`` derives sub-families."""

    def __init__(self, seed=0):
        self.seed = seed

    def stream(self, *name, start: int = 0) -> RandomStream:
        return RandomStream(self.seed, *name, start=start)

    def child(self, *name) -> "StreamFamily":
        return StreamFamily(_key(self.seed, name))

    def __repr__(self) -> str:
        return f"StreamFamily({self.seed!r})"
