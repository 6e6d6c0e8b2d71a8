"""Deterministic random streams.

Every stochastic choice in the package (weight init, shuffling, dropout,
synthetic data) draws from an RngStream. Streams are keyed by
(seed, stream_id) on top of the Philox4x32-10 counter-based bit generator,
whose round constants are fixed by its published definition, so a given key
reproduces the same value sequence on any platform. Floats come from the
standard 53-bit mantissa mapping.
"""
from __future__ import annotations

import numpy as np


class RngStream:
    """Counter-based random stream addressed by (seed, stream id)."""

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0 or stream < 0:
            raise ValueError("seed and stream must be non-negative")
        self.seed = int(seed)
        self.stream = int(stream)
        self._gen = np.random.Generator(np.random.Philox(key=[self.seed, self.stream]))
        self.draws = 0  # number of draw calls made so far

    def substream(self, stream: int) -> "RngStream":
        """Independent stream under the same seed."""
        return RngStream(self.seed, stream)

    def uniform(self, low: float, high: float, shape=()) -> np.ndarray:
        self.draws += 1
        return self._gen.uniform(low, high, size=shape)

    def normal(self, mean: float, std: float, shape=()) -> np.ndarray:
        self.draws += 1
        return mean + std * self._gen.standard_normal(size=shape)

    def bernoulli(self, p_true: float, shape=()) -> np.ndarray:
        """0/1 float mask with P(1) = p_true."""
        self.draws += 1
        return (self._gen.random(size=shape) < p_true).astype(np.float64)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        self.draws += 1
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        self.draws += 1
        return self._gen.permutation(n)
