"""Deterministic random number generation.

The generator is Philox4x64 (counter-based, 256-bit counter / 128-bit key),
keyed from a ``(seed, stream)`` pair through ``numpy.random.SeedSequence``.
This choice is frozen for the lifetime of the repository: identical seeds
produce identical sequences on every platform, and distinct stream ids give
statistically independent, non-overlapping streams.

Gaussian variates are produced by the Box-Muller transform. Each transform
yields a pair (cosine branch first, then sine branch); both values are
consumed in order, with the second value buffered between calls, so the
draw sequence is independent of how draws are batched.
"""

from __future__ import annotations

import math

import numpy as np


class Rng:
    """Seedable deterministic generator; one instance per logical task."""

    def __init__(self, seed: int, stream: int = 0):
        ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),))
        self._gen = np.random.Generator(np.random.Philox(ss))
        self._spare: float | None = None

    def uniform(self) -> float:
        """One draw from U[0, 1)."""
        return float(self._gen.random())

    def uniform_array(self, n: int) -> np.ndarray:
        return self._gen.random(int(n))

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in the inclusive range [lo, hi]."""
        if hi < lo:
            raise ValueError(f"empty integer range [{lo}, {hi}]")
        span = hi - lo + 1
        v = lo + int(self.uniform() * span)
        return min(v, hi)

    def gaussian(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        """One draw from N(mu, sigma^2); sigma == 0 returns mu exactly."""
        if sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {sigma}")
        if sigma == 0:
            return float(mu)
        if self._spare is not None:
            z, self._spare = self._spare, None
        else:
            z, self._spare = self._box_muller_pair()
        return mu + sigma * z

    def gaussian_array(self, shape, mu: float = 0.0, sigma: float = 1.0) -> np.ndarray:
        """Array of N(mu, sigma^2) draws, consuming the same stream as gaussian()."""
        if sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {sigma}")
        shape = tuple(np.atleast_1d(shape).astype(int)) if not np.isscalar(shape) else (int(shape),)
        n = int(np.prod(shape)) if shape else 1
        if sigma == 0:
            return np.full(shape, float(mu))
        out = np.empty(n)
        i = 0
        if self._spare is not None and n > 0:
            out[0] = self._spare
            self._spare = None
            i = 1
        npairs = (n - i + 1) // 2
        if npairs:
            # draw the u1/u2 pairs in the same interleaved order as gaussian()
            block = self._gen.random(2 * npairs)
            u1 = 1.0 - block[0::2]  # (0, 1]: keep log finite
            u2 = block[1::2]
            r = np.sqrt(-2.0 * np.log(u1))
            t = 2.0 * math.pi * u2
            pairs = np.empty(2 * npairs)
            pairs[0::2] = r * np.cos(t)
            pairs[1::2] = r * np.sin(t)
            take = n - i
            out[i:] = pairs[:take]
            if take < 2 * npairs:
                self._spare = float(pairs[take])
        return (mu + sigma * out).reshape(shape)

    def _box_muller_pair(self) -> tuple[float, float]:
        u1 = 1.0 - self.uniform()
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        t = 2.0 * math.pi * u2
        return r * math.cos(t), r * math.sin(t)


def gaussian_draw(rng: Rng, mu: float, sigma: float) -> float:
    """One sample from N(mu, sigma^2) via Box-Muller; sigma = 0 gives mu exactly."""
    return rng.gaussian(mu, sigma)
