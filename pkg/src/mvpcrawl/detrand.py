"""Deterministic random source shared by workers and the simulated web.

Every randomized decision in the pipeline is drawn from an explicit
64-bit LCG stream so that a crawl set's four vantage-point members (and
any re-run of the whole experiment) see identical sequences. Streams are
cheap value objects: cloning the state forks an independent replica.
"""

from __future__ import annotations

from dataclasses import dataclass

_MASK64 = (1 << 64) - 1

# Knuth MMIX multiplier/increment.
_MULT = 6364136223846793005
_INC = 1442695040888963407

# Mixed into seeds so seed 0 does not produce the all-zero state.
_SEED_GAMMA = 0x9E3779B97F4A7C15

_FNV_OFFSET = 14695981039346656037
_FNV_PRIME = 1099511628211


def fnv1a64(data: bytes | str) -> int:
    """64-bit FNV-1a hash, used for sync-tag seeds and stream labels."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


@dataclass
class DetRand:
    """A 64-bit LCG stream. State evolves only through ``next_*`` calls."""

    state: int

    def clone(self) -> "DetRand":
        return DetRand(self.state)

    def next_u64(self) -> int:
        self.state = (self.state * _MULT + _INC) & _MASK64
        return self.state

    def next_unit(self) -> float:
        """Uniform float in [0, 1): top 53 bits of the stepped state."""
        return (self.next_u64() >> 11) / (1 << 53)

    def next_below(self, n: int) -> int:
        """Uniform int in [0, n)."""
        if n <= 0:
            raise ValueError("n must be positive")
        return int(self.next_unit() * n)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates using this stream."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_below(i + 1)
            items[i], items[j] = items[j], items[i]


def seed_rng(seed: int) -> DetRand:
    """Build a stream from a 64-bit seed; the all-zero state maps to 1."""
    state = (seed ^ _SEED_GAMMA) & _MASK64
    return DetRand(state if state != 0 else 1)


def derive_substream(seed: int, label: str) -> DetRand:
    """Labeled substream so independent activities never share draws.

    Derivation is order-independent: the result depends only on the
    (seed, label) pair, not on any other stream's consumption.
    """
    if not label:
        raise ValueError("substream label must be non-empty")
    return seed_rng(fnv1a64(label) ^ seed)
