"""Counter-based random streams.

The simulation kernel needs one independent uniform stream per neuron, and the
stream must not depend on how neurons are assigned to workers. A counter-based
generator gives that for free: the variate for (seed, neuron, tick) is a pure
function of those three integers, so any partitioning produces identical draws.

The mixing function is splitmix64. Not cryptographic; statistically fine for
spike thresholding and seed derivation.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """splitmix64 finalizer: a 64-bit bijection with good avalanche."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def stream_base(seed: int, neuron: int) -> int:
    """Per-neuron stream offset, derived from (seed, neuron index)."""
    return mix64((seed & _MASK) ^ mix64((neuron + 1) * _GOLDEN))


def uniform(seed: int, neuron: int, tick: int) -> float:
    """Uniform variate in [0, 1) for one neuron at one tick.

    Mirrored bit-for-bit by the compiled kernel in kernels.py; keep the two in
    sync if either changes.
    """
    h = mix64((stream_base(seed, neuron) + tick * _GOLDEN) & _MASK)
    return (h >> 11) * 2.0**-53


def derive_seed(seed: int, index: int) -> int:
    """Stable child seed for sweep cells and connection rules."""
    return mix64((seed & _MASK) + (index + 1) * _GOLDEN)
