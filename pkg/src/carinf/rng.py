"""Seeded, splittable random streams.

Every replication owns a Philox (counter-based) generator keyed by
``(master_seed, replication_index)``, so results never depend on how work is
split across processes.
"""

from __future__ import annotations

import numpy as np


def stream(master_seed: int, index: int = 0, *extra: int) -> np.random.Generator:
    """Independent generator for ``(master_seed, index, *extra)``."""
    ss = np.random.SeedSequence([int(master_seed), int(index), *map(int, extra)])
    return np.random.Generator(np.random.Philox(ss))


class UniformStream:
    """Buffered U(0, 1) draws from a generator, consumed one at a time."""

    __slots__ = ("_gen", "_buf", "_pos", "_chunk")

    def __init__(self, gen: np.random.Generator | int | None = None, chunk: int = 512):
        if not isinstance(gen, np.random.Generator):
            gen = stream(0 if gen is None else gen)
        self._gen = gen
        self._chunk = chunk
        self._buf = []
        self._pos = 0

    def next(self) -> float:
        if self._pos >= len(self._buf):
            self._buf = self._gen.random(self._chunk).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u

    __call__ = next
