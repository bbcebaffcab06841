"""Hypercube interconnect model.

Nodes carry d-bit labels; an edge exists exactly between labels that
differ in one bit.  Links whose differing bit lies in ``chip_dims`` are
intra-package ("on chip") and get a cheaper latency factor; everything
else is normalised to 1.0.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

OFF_CHIP_FACTOR = 1.0
DEFAULT_ON_CHIP_FACTOR = 0.8


class LinkClass(Enum):
    ON_CHIP = "on_chip"
    OFF_CHIP = "off_chip"


def default_chip_dims(d: int) -> frozenset[int]:
    """The two most significant dimensions, where they exist."""
    return frozenset(k for k in (d - 2, d - 1) if k >= 0)


@dataclass(frozen=True)
class Hypercube:
    """A d-dimensional hypercube with an optional on-chip link mapping.

    ``chip_dims`` is the set of bit positions whose single-bit flips are
    intra-chip links.  ``on_chip_factor`` is the latency factor applied
    to those links; off-chip links are the 1.0 normalisation point.
    """

    d: int
    chip_dims: frozenset[int] = field(default=frozenset())
    on_chip_factor: float = DEFAULT_ON_CHIP_FACTOR

    def __post_init__(self):
        if self.d < 0:
            raise ValueError(f"dimension must be non-negative, got {self.d}")
        object.__setattr__(self, "chip_dims", frozenset(self.chip_dims))
        bad = [k for k in self.chip_dims if not 0 <= k < self.d]
        if bad:
            raise ValueError(f"chip_dims {sorted(bad)} outside [0, {self.d})")
        if self.on_chip_factor <= 0:
            raise ValueError("on_chip_factor must be positive")

    @classmethod
    def with_default_mapping(cls, d: int, on_chip_factor: float = DEFAULT_ON_CHIP_FACTOR) -> "Hypercube":
        return cls(d, default_chip_dims(d), on_chip_factor)

    @property
    def node_count(self) -> int:
        return 1 << self.d

    @property
    def edge_count(self) -> int:
        return self.d << (self.d - 1) if self.d else 0

    def nodes(self) -> range:
        return range(self.node_count)

    def check_label(self, label: int) -> int:
        if not 0 <= label < self.node_count:
            raise ValueError(f"node label {label} outside [0, {self.node_count})")
        return label

    def adjacent(self, a: int, b: int) -> bool:
        """True iff the labels differ in exactly one bit."""
        x = self.check_label(a) ^ self.check_label(b)
        return x != 0 and (x & (x - 1)) == 0

    def hop_distance(self, a: int, b: int) -> int:
        """Minimal routing hops: popcount of the label difference."""
        return (self.check_label(a) ^ self.check_label(b)).bit_count()

    def link_class(self, a: int, b: int) -> LinkClass:
        if not self.adjacent(a, b):
            raise ValueError(f"nodes {a} and {b} are not adjacent")
        dim = (a ^ b).bit_length() - 1
        return LinkClass.ON_CHIP if dim in self.chip_dims else LinkClass.OFF_CHIP

    def link_factor(self, a: int, b: int) -> float:
        if self.link_class(a, b) is LinkClass.ON_CHIP:
            return self.on_chip_factor
        return OFF_CHIP_FACTOR

    def route(self, a: int, b: int) -> list[int]:
        """Deterministic minimal path, fixing differing bits LSB first."""
        self.check_label(a)
        self.check_label(b)
        path = [a]
        cur = a
        diff = a ^ b
        while diff:
            low = diff & -diff
            cur ^= low
            diff ^= low
            path.append(cur)
        return path

    def path_factor(self, a: int, b: int) -> float:
        """Summed per-hop latency factors along ``route(a, b)``.

        Zero for a == b; equals ``link_factor`` for neighbours.
        """
        path = self.route(a, b)
        return sum(self.link_factor(u, v) for u, v in zip(path, path[1:]))
