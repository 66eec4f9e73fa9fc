"""Deterministic, splittable random streams.

Every stochastic component in the package (parameter init, minibatch order,
dropout masks, anchor draws, data generation) owns its own ``RngStream`` so
that runs are reproducible end to end and parallel workers never contend for
shared RNG state.
"""

from __future__ import annotations

import numpy as np

__all__ = ["RngStream"]


class RngStream:
    """Counter-based random stream: draws are a pure function of (seed, counter).

    Each draw seeds a fresh generator from ``(seed, counter)`` and advances the
    counter, so replaying a stream from the same (seed, counter) reproduces the
    exact same sequence. ``split`` derives an independent child stream; parent
    and child never share state.
    """

    def __init__(self, seed: int, counter: int = 0):
        if seed < 0:
            raise ValueError(f"seed must be nonnegative, got {seed}")
        self.seed = int(seed)
        self.counter = int(counter)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, counter={self.counter})"

    def _next_generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.counter,))
        self.counter += 1
        return np.random.Generator(np.random.PCG64(seq))

    def split(self) -> "RngStream":
        """Derive an independent child stream (advances this stream's counter)."""
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.counter,))
        self.counter += 1
        child_seed = int(seq.generate_state(1, dtype=np.uint64)[0])
        return RngStream(child_seed)

    def normal(self, shape, loc: float = 0.0, scale: float = 1.0) -> np.ndarray:
        return self._next_generator().normal(loc=loc, scale=scale, size=shape)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._next_generator().uniform(low=low, high=high, size=shape)

    def integers(self, low: int, high: int, size=None):
        return self._next_generator().integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._next_generator().permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._next_generator().choice(n, size=size, replace=replace)
