"""Portable splitmix64 streams.

The i-th draw (i = 1, 2, ...) of a stream with state ``s`` is
``mix(s + i * GAMMA)`` modulo 2**64, where

    GAMMA = 0x9E3779B97F4A7C15
    mix(z): z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
            z = (z ^ (z >> 27)) * 0x94D049BB133111EB
            return z ^ (z >> 31)

Stream ``k`` of a master seed has state ``mix(seed + (k + 1) * GAMMA)``.
Uniform reals are the top 53 bits scaled by 2**-53, so every platform
reproduces the same values.
"""

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
MASK = (1 << 64) - 1


def mix64(z):
    """splitmix64 finalizer on a Python int."""
    z = ((z ^ (z >> 30)) * MIX1) & MASK
    z = ((z ^ (z >> 27)) * MIX2) & MASK
    return z ^ (z >> 31)


def hash_ints(seed, *parts):
    """Chain `parts` into a 64-bit hash starting from `seed`."""
    z = seed & MASK
    for part in parts:
        z = mix64((z + (int(part) + 1) * GAMMA) & MASK)
    return z


def stream_state(seed, stream):
    return mix64((int(seed) + (int(stream) + 1) * GAMMA) & MASK)


def _mix_array(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
    return z ^ (z >> np.uint64(31))


def draws(state, n):
    """First `n` raw 64-bit draws of a stream, as uint64."""
    i = np.arange(1, n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix_array(np.uint64(state) + i * np.uint64(GAMMA))


def uniform(state, n):
    """`n` uniform reals in [0, 1)."""
    return (draws(state, n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


def integers(state, n, high):
    """`n` integers in [0, high) (modulo reduction)."""
    return (draws(state, n) % np.uint64(high)).astype(np.int64)
