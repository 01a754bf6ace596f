"""Deterministic counter-based random streams.

Every random draw made during a simulation comes from a stream derived from
the master seed plus a structured key (algorithm tag, round, silo, purpose,
draw index).  Identical keys reproduce identical sequences within one build;
distinct keys give statistically independent streams, so per-silo/per-round
work can run in any order (or concurrently) without changing results.

Gaussian variates use Box-Muller on the raw uniform stream.  The transform is
pinned so trajectories are reproducible; bit-exactness across platforms or
numpy versions is not promised.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["Stream", "derive_rng"]


class Stream:
    """A keyed Philox stream with a fixed Gaussian transform."""

    def __init__(self, generator: np.random.Generator):
        self._gen = generator

    def random(self, size=None):
        return self._gen.random(size)

    def normal(self, size=None, scale: float = 1.0):
        """Standard normal draws via Box-Muller; `scale` multiplies the result."""
        n = 1 if size is None else int(np.prod(size))
        m = (n + 1) // 2
        u1 = 1.0 - self._gen.random(m)  # in (0, 1] so the log is finite
        u2 = self._gen.random(m)
        radius = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([radius * np.cos(2.0 * np.pi * u2),
                            radius * np.sin(2.0 * np.pi * u2)])[:n]
        if scale != 1.0:
            z = z * scale
        if size is None:
            return float(z[0])
        return z.reshape(size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high=high, size=size)

    def binomial(self, n, p, size=None):
        return self._gen.binomial(n, p, size)

    def bernoulli(self, probs) -> np.ndarray:
        probs = np.asarray(probs, dtype=float)
        return (self._gen.random(probs.shape) < probs).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def subset(self, n: int, k: int) -> np.ndarray:
        """Uniformly random size-k subset of range(n), returned sorted."""
        idx = self._gen.choice(n, size=k, replace=False)
        idx.sort()
        return idx

    def choice_index(self, n: int) -> int:
        return int(self._gen.integers(0, n))


def derive_rng(master_seed: int, algo: str = "", round_key=0, silo=0,
               purpose: str = "", index=0) -> Stream:
    """Derive an independent stream from the master seed and a structured key.

    The key tuple is hashed (SHA-256) into a 128-bit Philox key, so streams are
    counter-based: no draw on one stream advances any other.
    """
    msg = f"{master_seed}|{algo}|{round_key}|{silo}|{purpose}|{index}".encode()
    key = int.from_bytes(hashlib.sha256(msg).digest()[:16], "little")
    return Stream(np.random.Generator(np.random.Philox(key=key)))
