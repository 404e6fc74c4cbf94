"""Portable deterministic random number generation.

Every random draw in this package (fault matrices, built-in model weights,
synthetic data sets) comes from xoshiro256** seeded through SplitMix64, both
implemented here in pure integer arithmetic. The streams therefore depend
only on the 64-bit seed, never on platform, Python version or numpy version.

References for the algorithms: Blackman & Vigna, "Scrambled linear
pseudorandom number generators" (xoshiro256**), and Steele, Lea & Flood's
SplitMix64 seeding recipe.
"""

from __future__ import annotations

import hashlib

_MASK64 = 0xFFFFFFFFFFFFFFFF


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a SplitMix64 state once; returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    z ^= z >> 31
    return state, z


def derive_seed(seed: int, label: str) -> int:
    """Derive an independent 64-bit stream seed from (seed, label).

    Uses BLAKE2b-64 over the label bytes plus the little-endian seed, so
    distinct purposes ("weights of layer 3 of tiny-cnn", "image 17") get
    decorrelated streams from one user-facing seed.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(label.encode("utf-8"))
    h.update((seed & _MASK64).to_bytes(8, "little"))
    return int.from_bytes(h.digest(), "little")


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Xoshiro256StarStar:
    """xoshiro256** with convenience draws used across the package.

    Integer draws in [0, n) use Lemire's multiply-shift reduction
    ``(next_u64() * n) >> 64``: bias is negligible for the small ranges used
    here and the mapping is exactly reproducible everywhere.
    """

    def __init__(self, seed: int):
        self.seed = seed & _MASK64
        state = self.seed
        s = []
        for _ in range(4):
            state, out = splitmix64(state)
            s.append(out)
        self._s = s

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform float64 in [0, 1) built from the top 53 bits."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def randint_below(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError(f"randint_below needs n >= 1, got {n}")
        return (self.next_u64() * n) >> 64

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()
