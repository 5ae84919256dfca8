"""Deterministic splittable random number generator.

A single 64-bit splitmix state drives every stochastic decision in the
package (weight init, batch sampling, alterations, dropout gates), so a run
is reproducible from one seed and the state can be checkpointed as one
integer. Children created with ``split()`` are independent streams.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_INV_2_53 = 2.0 ** -53


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def _mix_array(z: np.ndarray) -> np.ndarray:
    # uint64 arithmetic wraps mod 2**64, matching the scalar path
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


class Rng:
    """splitmix64 generator with a serializable 64-bit state."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = int(seed) & _MASK64

    @property
    def state(self) -> int:
        return self._state

    def set_state(self, state: int) -> None:
        self._state = int(state) & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        return _mix(self._state)

    def _u64_block(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GOLDEN)
        block = _mix_array(np.uint64(self._state) + steps)
        self._state = (self._state + n * _GOLDEN) & _MASK64
        return block

    def uniform(self) -> float:
        """One double in [0, 1)."""
        return (self.next_u64() >> 11) * _INV_2_53

    def gate(self, p: float) -> bool:
        """Bernoulli gate draw: True with probability p.

        The draw is taken from (0, 1] so p=0 never fires and p=1 always does.
        """
        r = ((self.next_u64() >> 11) + 1) * _INV_2_53
        return r <= p

    def uniforms(self, shape) -> np.ndarray:
        n = int(np.prod(shape)) if not isinstance(shape, int) else shape
        out = (self._u64_block(max(n, 1))[:n] >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return out.reshape(shape)

    def normals(self, shape, dtype=np.float32) -> np.ndarray:
        """Standard normal draws via Box-Muller."""
        n = int(np.prod(shape)) if not isinstance(shape, int) else shape
        pairs = (n + 1) // 2
        u1 = np.maximum(self.uniforms(pairs), _INV_2_53)
        u2 = self.uniforms(pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        out = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return out.reshape(shape).astype(dtype)

    def randint(self, n: int) -> int:
        """Integer in [0, n). Modulo bias is negligible for n << 2**64."""
        if n <= 0:
            raise ValueError("randint bound must be positive")
        return self.next_u64() % n

    def choice(self, n: int, size: int) -> np.ndarray:
        """size integers in [0, n), drawn with replacement."""
        return np.array([self.randint(n) for _ in range(size)], dtype=np.int64)

    def permutation(self, n: int) -> np.ndarray:
        idx = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.randint(i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return idx

    def split(self) -> "Rng":
        """Derive an independent child stream, advancing this one."""
        return Rng(self.next_u64())

    def __repr__(self) -> str:
        return f"Rng(state={self._state:#018x})"
