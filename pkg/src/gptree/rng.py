"""Seed-derived random streams.

Every stochastic component draws from its own stream, derived from the run
seed plus a structural path (e.g. node id, then chain id).  Streams with
equal (seed, path) always produce identical draw sequences, and distinct
paths are statistically independent, so results never depend on execution
order or on how work is spread across workers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream addressed by (seed, path)."""

    seed: int
    path: tuple[int, ...] = ()

    def child(self, *ids: int) -> "RngStream":
        """Derive a sub-stream; children with distinct ids are independent."""
        return RngStream(self.seed, self.path + tuple(int(i) for i in ids))

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.PCG64(ss))
