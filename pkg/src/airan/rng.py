"""Named, seedable random streams.

Every consumer (dropout, policy sampling, buffer sampling, trace synthesis,
...) draws from its own generator derived from one root seed, so adding draws
in one place never perturbs another.
"""
from __future__ import annotations

import zlib

import numpy as np


def _stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``name`` under root ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_stream_key(name),))
    return np.random.Generator(np.random.PCG64(ss))


class RngStreams:
    """Lazily created named streams sharing one root seed.

    Asking twice for the same name returns the same (stateful) generator.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}

    def __getitem__(self, name: str) -> np.random.Generator:
        gen = self._streams.get(name)
        if gen is None:
            gen = stream(self.seed, name)
            self._streams[name] = gen
        return gen

    def fresh(self, name: str) -> np.random.Generator:
        """A new generator for ``name`` positioned at the start of the stream."""
        return stream(self.seed, name)
