"""Reproducible random numbers for the walkers.

The bit stream is numpy's PCG64 seeded through ``SeedSequence(seed)``; both
are frozen by numpy's stream-compatibility policy for bit generators, unlike
``Generator.standard_normal`` whose algorithm may change between releases.

Normals come from the Marsaglia polar method on consecutive pairs of raw
64-bit words. Each word ``w`` maps to ``(w >> 11) * 2**-53`` in [0, 1); a pair
``(u1, u2)`` becomes ``x = 2*u1 - 1, y = 2*u2 - 1``; pairs with
``s = x*x + y*y`` outside (0, 1) are discarded, otherwise the pair yields the
two normals ``x*f`` then ``y*f`` with ``f = sqrt(-2 ln(s) / s)``. Generated
normals are buffered, so the output sequence does not depend on how the
caller splits its requests.
"""
from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_BATCH_PAIRS = 256


class WalkRNG:
    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._bits = np.random.PCG64(self.seed)
        self._buffer = np.empty(0)

    def _refill(self, needed: int) -> None:
        chunks = [self._buffer]
        have = self._buffer.size
        while have < needed:
            pairs = max(_BATCH_PAIRS, (needed - have + 1) // 2 * 2)
            raw = self._bits.random_raw(2 * pairs)
            u = (raw >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
            x = 2.0 * u[0::2] - 1.0
            y = 2.0 * u[1::2] - 1.0
            s = x * x + y * y
            keep = (s > 0.0) & (s < 1.0)
            x, y, s = x[keep], y[keep], s[keep]
            f = np.sqrt(-2.0 * np.log(s) / s)
            out = np.empty(2 * x.size)
            out[0::2] = x * f
            out[1::2] = y * f
            chunks.append(out)
            have += out.size
        self._buffer = np.concatenate(chunks)

    def normals(self, n: int) -> np.ndarray:
        """Next ``n`` standard normal deviates of the stream."""
        if n > self._buffer.size:
            self._refill(n)
        out = self._buffer[:n].copy()
        self._buffer = self._buffer[n:]
        return out
