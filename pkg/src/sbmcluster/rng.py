"""Reproducible random streams keyed by (seed, iteration, item).

Every random draw in the package comes from a stream whose identity is a key
tuple, never from a shared generator, so the numbers an item sees do not
depend on how work is split across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_MUL2 = np.uint64(0x94D049BB133111EB)


def _splitmix(z: np.ndarray) -> np.ndarray:
    # uint64 arithmetic wraps modulo 2**64, which is what splitmix64 wants
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MUL1
    z = (z ^ (z >> np.uint64(27))) * _MUL2
    return z ^ (z >> np.uint64(31))


@dataclass(frozen=True)
class RngSpec:
    """Global seed plus the derivation rule for per-item streams."""

    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.seed, (int, np.integer)) or not 0 <= int(self.seed) <= _MASK64:
            raise ValueError(f"seed must be an integer in [0, 2**64), got {self.seed!r}")

    def generator(self, *key: int) -> np.random.Generator:
        """Return an independent generator for the stream named by ``key``."""
        ss = np.random.SeedSequence(int(self.seed), spawn_key=tuple(int(k) for k in key))
        return np.random.Generator(np.random.PCG64(ss))

    def stream_keys(self, stream: int, iteration: int, items) -> np.ndarray:
        """One 64-bit key per item; draw ``j`` of item ``e`` is ``counter_uniform(key[e], j)``."""
        items = np.asarray(items, dtype=np.uint64)
        base = _splitmix(np.array([int(self.seed) & _MASK64], dtype=np.uint64))
        base = _splitmix(base ^ np.uint64(stream & _MASK64))
        base = _splitmix(base ^ np.uint64(iteration & _MASK64))
        return _splitmix(base ^ items)

    def uniforms(self, stream: int, iteration: int, items, count: int) -> np.ndarray:
        """Counter-based uniforms in [0, 1), shape ``(len(items), count)``.

        Row ``r`` depends only on ``(seed, stream, iteration, items[r])``, so any
        subset of items can be evaluated in any order and still agree with a
        full evaluation.
        """
        keys = self.stream_keys(stream, iteration, items)
        ctr = np.arange(1, count + 1, dtype=np.uint64) * _GOLDEN
        bits = _splitmix(keys[:, None] + ctr[None, :])
        return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
