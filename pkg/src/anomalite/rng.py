"""Deterministic random streams for weight init and shuffling.

Everything reproducible in this package is driven by the splitmix64
mixer below rather than a third-party generator, so seeded runs give
bit-identical results regardless of library versions. The counter-mode
form (mix(seed + i * GOLDEN)) is the standard stateless usage.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = 0x9E3779B97F4A7C15
_MASK64 = 0xFFFFFFFFFFFFFFFF


def _mix(z: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer; z is uint64 and wraps mod 2**64 throughout,
    # so numpy's scalar overflow warning is suppressed on purpose
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def u64_stream(seed: int, count: int) -> np.ndarray:
    """`count` pseudo-random uint64 words for the given seed."""
    if count < 0:
        raise ValueError("count must be non-negative")
    base = np.uint64(seed & _MASK64)
    i = np.arange(1, count + 1, dtype=np.uint64)
    return _mix(base + i * np.uint64(_GOLDEN))


def unit_uniforms(seed: int, count: int) -> np.ndarray:
    """`count` float64 samples uniform in [0, 1)."""
    # top 53 bits scaled down, the usual u64 -> double construction
    return (u64_stream(seed, count) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def derive_seed(seed: int, *salts: int) -> int:
    """Fold extra integers (epoch index, group id, ...) into a seed."""
    state = seed & _MASK64
    for salt in salts:
        state = (state + ((salt & _MASK64) * _GOLDEN & _MASK64) + _GOLDEN) & _MASK64
        state = int(_mix(np.uint64(state)))
    return state


def string_salt(text: str) -> int:
    """Stable 64-bit hash of a string (FNV-1a), usable as a derive_seed salt."""
    acc = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        acc = ((acc ^ byte) * 0x100000001B3) & _MASK64
    return acc


def shuffle_indices(n: int, seed: int) -> np.ndarray:
    """Deterministic permutation of range(n) via Fisher-Yates.

    The swap partner for position i is draw % (i + 1); the modulo bias is
    far below anything observable at the sizes used here.
    """
    idx = np.arange(n)
    if n < 2:
        return idx
    draws = u64_stream(seed, n - 1)
    for k, i in enumerate(range(n - 1, 0, -1)):
        j = int(draws[k] % np.uint64(i + 1))
        idx[i], idx[j] = idx[j], idx[i]
    return idx
