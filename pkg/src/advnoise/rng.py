"""Deterministic, counter-based random number generation.

Draw k of a stream is a pure function of (seed, k): the 64-bit counter is
mixed through a SplitMix64-style finalizer, so identical seeds give
byte-identical streams on any platform and the state is just two integers.
Gaussian samples come from the Box-Muller transform applied to consecutive
uniform pairs.
"""

from __future__ import annotations

import math

import numpy as np

_U64 = np.uint64
_MASK64 = (1 << 64) - 1
_GOLDEN = _U64(0x9E3779B97F4A7C15)
_MIX_A = _U64(0xBF58476D1CE4E5B9)
_MIX_B = _U64(0x94D049BB133111EB)
_SPAWN = _U64(0xD6E8FEB86659FD93)


def _mix(z: np.ndarray) -> np.ndarray:
    # SplitMix64 finalizer; uint64 wrap-around is intended.
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _U64(30))) * _MIX_A
        z = (z ^ (z >> _U64(27))) * _MIX_B
        return z ^ (z >> _U64(31))


class Rng:
    """Seedable stream of uniform and standard-normal samples.

    The stream position is an explicit counter: uniform draw ``k`` equals
    ``mix(seed + (k + 1) * golden) >> 11`` scaled to [0, 1). Saving and
    restoring ``state`` resumes a stream mid-way, bit for bit.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, counter={self.counter})"

    @property
    def state(self) -> tuple[int, int]:
        return (self.seed, self.counter)

    @classmethod
    def from_state(cls, state: tuple[int, int]) -> "Rng":
        rng = cls(state[0])
        rng.counter = int(state[1])
        return rng

    def spawn(self, key: int) -> "Rng":
        """Independent child stream for (seed, key); distinct keys give
        distinct streams without consuming draws from the parent."""
        mixed = _mix(np.asarray(self.seed, dtype=np.uint64) ^ _mix(np.asarray((int(key) & _MASK64), dtype=np.uint64) + _SPAWN))
        return Rng(int(mixed))

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        return _mix(np.asarray(self.seed, dtype=np.uint64) + idx * _GOLDEN)

    def uniform(self, n: int) -> np.ndarray:
        """n i.i.d. uniforms in [0, 1) as float64 (53-bit mantissas)."""
        return (self._raw(n) >> _U64(11)) * (2.0 ** -53)

    def normal(self, shape) -> np.ndarray:
        """i.i.d. standard-normal samples of the given shape (Box-Muller)."""
        if np.isscalar(shape):
            shape = (int(shape),)
        n = int(np.prod(shape)) if len(shape) > 0 else 1
        m = n + (n & 1)
        u = self.uniform(m)
        # 1 - u lies in (0, 1]; keeps the log finite.
        r = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        theta = (2.0 * math.pi) * u[1::2]
        out = np.empty(m, dtype=np.float64)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n].reshape(shape)

    def randint(self, bound: int, size: int) -> np.ndarray:
        """size integers uniform on [0, bound)."""
        u = self.uniform(size)
        return np.minimum((u * bound).astype(np.int64), bound - 1)

    def permutation(self, n: int) -> np.ndarray:
        """Uniformly random permutation of range(n)."""
        return np.argsort(self.uniform(n), kind="stable")
