"""Counter-based random streams.

Every source of randomness is addressed by the tuple
``(master_seed, trajectory_index, stream_label, interval_index)``.  The first
two words form a Philox key and the last two select a disjoint block of the
Philox counter space, so a stream never depends on which other streams were
drawn before it, or on which worker drew them.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np

_MASK64 = (1 << 64) - 1


class Stream(IntEnum):
    """Stream labels, one per independent randomness source."""

    BM = 0
    BRIDGE_CROSSING = 1
    REFLECT_B1 = 2
    REFLECT_B2 = 3
    REFLECT_CROSSING = 4
    DYADIC_B1 = 5
    DYADIC_BRIDGE = 6
    DYADIC_W = 7
    DYADIC_W_CROSSING = 8
    DYADIC_ENDPOINT = 9
    SYNC_B1 = 10
    SYNC_B2 = 11
    AUX = 12
    AUX2 = 13


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    trajectory_index: int = 0
    stream_label: int = 0

    def __post_init__(self):
        if not 0 <= self.master_seed <= _MASK64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if self.trajectory_index < 0 or self.stream_label < 0:
            raise ValueError("trajectory_index and stream_label must be non-negative")

    def with_stream(self, label: int) -> "SeedSpec":
        return replace(self, stream_label=int(label))

    def generator(self, interval: int = 0) -> np.random.Generator:
        """Generator for one (stream, interval) block of this trajectory."""
        bitgen = np.random.Philox(
            key=[self.master_seed, self.trajectory_index],
            counter=[0, 0, int(interval) & _MASK64, self.stream_label],
        )
        return np.random.Generator(bitgen)

    def to_dict(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "trajectory_index": self.trajectory_index,
            "stream_label": self.stream_label,
        }
