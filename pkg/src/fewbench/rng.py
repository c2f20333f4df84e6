"""Deterministic, forkable random streams.

The whole harness draws randomness through :class:`RngState`, a value
type identifying one substream of a counter-based generator.  A state is
(seed, path): the path is a tuple of integers fed to numpy's
``SeedSequence`` spawn key, so forking by index yields statistically
independent streams that do not depend on call order.  Episode ``i`` of a
stream therefore always sees the same draws no matter how many episodes
were generated before it, which is what makes parallel generation safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_MAX_SEED = 2**64


@dataclass(frozen=True)
class RngState:
    """One deterministic substream, identified by a 64-bit seed and a fork path."""

    seed: int
    path: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if not 0 <= int(self.seed) < _MAX_SEED:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    @property
    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of this substream.

        Each access returns a new generator; consuming from one does not
        advance another.  Treat an RngState as naming a stream, not as a
        mutable cursor.
        """
        seq = np.random.SeedSequence(entropy=int(self.seed), spawn_key=self.path)
        return np.random.Generator(np.random.Philox(seq))

    def fork(self, index: int) -> "RngState":
        """The ``index``-th child substream of this state."""
        if index < 0:
            raise ValueError(f"fork index must be non-negative, got {index}")
        return RngState(self.seed, self.path + (int(index),))
