"""
Platform-independent 64-bit linear congruential generator.

state <- state * 6364136223846793005 + 1442695040888963407  (mod 2**64)

Uniform doubles use the top 53 bits of each state; normals use Box-Muller on
consecutive pairs. Blocks of states are produced with jump-ahead doubling so
large draws stay vectorized.
"""

import numpy as np

LCG_MULTIPLIER = 6364136223846793005
LCG_INCREMENT = 1442695040888963407


class Lcg64:
    def __init__(self, seed: int):
        self._state = np.array([int(seed) % 2**64], dtype=np.uint64)

    @property
    def state(self) -> int:
        return int(self._state[0])

    def next_uint64(self, n: int) -> np.ndarray:
        """Next n states, in generation order"""
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        a = np.array([LCG_MULTIPLIER], dtype=np.uint64)
        c = np.array([LCG_INCREMENT], dtype=np.uint64)
        with np.errstate(over="ignore"):
            # state_{k+1} = mul[k] * state_0 + add[k]
            mul = a.copy()
            add = c.copy()
            while mul.shape[0] < n:
                m = mul.shape[0]
                step_mul = mul[m - 1 : m]
                step_add = add[m - 1 : m]
                mul = np.concatenate([mul, step_mul * mul])
                add = np.concatenate([add, step_mul * add + step_add])
            mul = mul[:n]
            add = add[:n]
            states = mul * self._state + add
        self._state = states[-1:].copy()
        return states

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        bits = self.next_uint64(n) >> np.uint64(11)
        unit = bits.astype(np.float64) * (1.0 / 2**53)
        return low + (high - low) * unit

    def normal(self, n: int) -> np.ndarray:
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        u1 = 1.0 - u[0::2]  # (0, 1]
        u2 = u[1::2]
        radius = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * pairs)
        z[0::2] = radius * np.cos(2.0 * np.pi * u2)
        z[1::2] = radius * np.sin(2.0 * np.pi * u2)
        return z[:n]
