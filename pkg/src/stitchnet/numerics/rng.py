"""Seeded random streams.

All randomness flows through :class:`Rng`, a thin wrapper over numpy's
Philox-4x64 counter-based generator (Salmon et al., 2011). Seeds are
expanded with ``SeedSequence`` so the stream for a given seed is fixed by the
algorithm definition, not by the host. Named child streams give independent
substreams (e.g. train vs. validation data) without sharing state.
"""

from __future__ import annotations

import zlib

import numpy as np

ALGORITHM = "philox4x64-10"


class Rng:
    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        if not 0 <= int(seed) < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.path = tuple(path)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.Philox(ss))

    @property
    def algorithm(self) -> str:
        return ALGORITHM

    def child(self, name: str) -> "Rng":
        """Independent substream keyed by ``name``; does not advance this stream."""
        return Rng(self.seed, self.path + (zlib.crc32(name.encode("utf-8")),))

    def normal(self, shape, std: float = 1.0, dtype=np.float32) -> np.ndarray:
        return (self._gen.standard_normal(shape) * std).astype(dtype)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integers(self, high: int, size=None) -> np.ndarray | int:
        out = self._gen.integers(0, high, size=size)
        return int(out) if size is None else out

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)
