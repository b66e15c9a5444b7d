"""Deterministic random number generation for the synthetic world.

All randomness in this package flows through :class:`Rng`, a xoshiro256**
generator with a fixed output layout, so that a (seed, stream) pair fully
determines every fixture byte-for-byte and the sequence can be reproduced
outside Python.

Layout, precisely:

* Lane states are seeded with splitmix64: lane ``l`` of stream ``m`` under
  seed ``s`` starts a splitmix64 sequence at ``s + m * GOLDEN`` and, after
  discarding ``4 * l`` outputs, takes the next four outputs as its
  xoshiro256** state ``(s0, s1, s2, s3)``.
* ``LANES = 256`` generators run in lockstep; raw 64-bit outputs are emitted
  row-major, i.e. output ``i`` comes from lane ``i % LANES`` at step
  ``i // LANES``.
* Uniform doubles are ``((x >> 11) + 1) * 2**-53`` (range ``(0, 1]``).
* Normals are Box-Muller pairs: from uniforms ``(u0, u1)`` drawn as two
  consecutive raw outputs, emit ``r*cos(2*pi*u1)`` then ``r*sin(2*pi*u1)``
  with ``r = sqrt(-2*ln(u0))``.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
LANES = 256

_U64 = np.uint64
_MASK = _U64(0xFFFFFFFFFFFFFFFF)


def _splitmix64_fill(seed: int, count: int) -> np.ndarray:
    """Return `count` successive splitmix64 outputs starting from `seed`."""
    out = np.empty(count, dtype=np.uint64)
    x = _U64(seed & 0xFFFFFFFFFFFFFFFF)
    with np.errstate(over="ignore"):
        for i in range(count):
            x = _U64(x + GOLDEN)
            z = x
            z = _U64((z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9))
            z = _U64((z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB))
            out[i] = z ^ (z >> _U64(31))
    return out


def _rotl(x: np.ndarray, k: int) -> np.ndarray:
    k = _U64(k)
    return (x << k) | (x >> _U64(64 - int(k)))


class Rng:
    """Vectorized xoshiro256** with the documented lane-interleaved layout."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        base = (self.seed + self.stream * int(GOLDEN)) & 0xFFFFFFFFFFFFFFFF
        raw = _splitmix64_fill(base, 4 * LANES)
        # lane l state = outputs [4l, 4l+4)
        self._state = raw.reshape(LANES, 4).T.copy()  # (4, LANES)
        self._buf = np.empty(0, dtype=np.uint64)

    def _step(self, nsteps: int) -> np.ndarray:
        """Advance all lanes `nsteps` times, returning (nsteps, LANES) raws."""
        s0, s1, s2, s3 = self._state
        out = np.empty((nsteps, LANES), dtype=np.uint64)
        five = _U64(5)
        nine = _U64(9)
        seventeen = _U64(17)
        with np.errstate(over="ignore"):
            for i in range(nsteps):
                out[i] = _rotl(s1 * five, 7) * nine
                t = s1 << seventeen
                s2 = s2 ^ s0
                s3 = s3 ^ s1
                s1 = s1 ^ s2
                s0 = s0 ^ s3
                s2 = s2 ^ t
                s3 = _rotl(s3, 45)
        self._state = np.stack([s0, s1, s2, s3])
        return out

    def raw(self, n: int) -> np.ndarray:
        """Next `n` raw 64-bit outputs in the interleaved order."""
        while self._buf.size < n:
            need = n - self._buf.size
            steps = -(-need // LANES)
            chunk = self._step(steps).reshape(-1)
            self._buf = np.concatenate([self._buf, chunk])
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def uniform(self, n: int) -> np.ndarray:
        """`n` doubles in (0, 1]."""
        x = self.raw(n)
        return ((x >> _U64(11)).astype(np.float64) + 1.0) * (2.0 ** -53)

    def normal(self, n: int, sigma: float = 1.0) -> np.ndarray:
        """`n` Gaussian draws via Box-Muller pairs."""
        npairs = -(-n // 2)
        u = self.uniform(2 * npairs).reshape(npairs, 2)
        r = np.sqrt(-2.0 * np.log(u[:, 0]))
        ang = 2.0 * np.pi * u[:, 1]
        z = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1).reshape(-1)
        return sigma * z[:n]

    def integers(self, n: int, bound: int) -> np.ndarray:
        """`n` ints in [0, bound) by multiply-shift on raw outputs (bound < 2**32)."""
        if not 0 < bound < 2 ** 32:
            raise ValueError("bound must be in [1, 2**32)")
        x = self.raw(n)
        b = _U64(bound)
        lo32 = _U64(0xFFFFFFFF)
        with np.errstate(over="ignore"):
            hi = (x >> _U64(32)) * b
            lo = (x & lo32) * b
            out = (hi + (lo >> _U64(32))) >> _U64(32)
        return out.astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        """Permutation of arange(n): stable argsort of one uniform per index."""
        return np.argsort(self.uniform(n), kind="stable")

    def subset(self, n: int, k: int) -> np.ndarray:
        """Sorted k-subset of arange(n): indices of the k smallest uniform keys."""
        if k >= n:
            return np.arange(n)
        return np.sort(self.permutation(n)[:k])
