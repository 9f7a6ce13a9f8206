"""Seeded random streams for the algorithms' coin flips and epoch lengths.

Streams wrap numpy's PCG64 bit generator, whose output for a given seed is
fixed across platforms.  Independent per-run streams are derived from a
master seed with ``SeedSequence`` spawning, so a grid of runs can be executed
in any order.
"""

import numpy as np

from .errors import ParameterError


class RngStream:
    """A single-owner stream of draws with a draw counter."""

    def __init__(self, seed, spawn_key=()):
        self.seed = int(seed)
        self.spawn_key = tuple(int(k) for k in spawn_key)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.spawn_key)
        self._gen = np.random.Generator(np.random.PCG64(seq))
        self.counter = 0

    @classmethod
    def for_run(cls, master_seed, run_index):
        """Independent stream for run ``run_index`` of a grid seeded by ``master_seed``."""
        return cls(master_seed, spawn_key=(run_index,))

    def uniform(self):
        self.counter += 1
        return float(self._gen.random())

    def bernoulli(self, p):
        """``True`` with probability ``p``; consumes exactly one draw."""
        if not 0.0 <= p <= 1.0:
            raise ParameterError(f"bernoulli probability {p} outside [0, 1]")
        return self.uniform() < p

    def geometric(self, q):
        """Number of trials up to and including the first success, ``P(T=k) = q(1-q)^(k-1)``."""
        if not 0.0 < q <= 1.0:
            raise ParameterError(f"geometric parameter {q} outside (0, 1]")
        self.counter += 1
        return int(self._gen.geometric(q))

    def normal(self, size):
        self.counter += 1
        return self._gen.standard_normal(size)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, spawn_key={self.spawn_key}, counter={self.counter})"


def bernoulli(s, p):
    return s.bernoulli(p)


def geometric(s, q):
    return s.geometric(q)
