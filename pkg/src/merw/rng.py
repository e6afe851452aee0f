"""Counter-based random numbers built on the SplitMix64 finalizer.

Every random quantity in the package is a pure function of a 64-bit key and
a 64-bit counter::

    uniform(key, i) = (mix64(key + (i + 1) * GOLDEN) >> 11) * 2**-53

so a trial can be replayed from ``(master_seed, trial_index)`` alone and the
result never depends on how trials are scheduled across workers.

Key derivation::

    trial_key(master, t)    = mix64(mix64(master) + (t + 1) * GOLDEN)
    stream_key(key, s)      = mix64(key ^ mix64((s + 1) * GOLDEN))

The scalar functions are numba-compiled so the simulation kernels can call
them inline; ``uniform_array`` is the vectorised numpy equivalent.
"""

from __future__ import annotations

import numba
import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

_U_GOLDEN = np.uint64(GOLDEN)
_U_M1 = np.uint64(_M1)
_U_M2 = np.uint64(_M2)
_U30 = np.uint64(30)
_U27 = np.uint64(27)
_U31 = np.uint64(31)
_U11 = np.uint64(11)
_U1 = np.uint64(1)
_INV53 = 1.0 / 9007199254740992.0


@numba.njit(cache=True, inline="always")
def mix64(z):
    z = np.uint64(z)
    z = (z ^ (z >> _U30)) * _U_M1
    z = (z ^ (z >> _U27)) * _U_M2
    return z ^ (z >> _U31)


@numba.njit(cache=True, inline="always")
def uniform(key, counter):
    """Uniform double in [0, 1) for position ``counter`` of stream ``key``."""
    z = mix64(np.uint64(key) + (np.uint64(counter) + _U1) * _U_GOLDEN)
    return float(z >> _U11) * _INV53


def mix64_py(z: int) -> int:
    """Pure-Python twin of :func:`mix64`, used to cross-check the kernels."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def uniform_py(key: int, counter: int) -> float:
    z = mix64_py((key + (counter + 1) * GOLDEN) & MASK64)
    return (z >> 11) * _INV53


def trial_key(master_seed: int, trial_index: int) -> int:
    """Key of trial ``trial_index`` under ``master_seed``."""
    if not 0 <= master_seed <= MASK64:
        raise ValueError(f"master seed must fit in 64 bits, got {master_seed}")
    if trial_index < 0:
        raise ValueError(f"trial index must be non-negative, got {trial_index}")
    return mix64_py((mix64_py(master_seed) + (trial_index + 1) * GOLDEN) & MASK64)


def stream_key(key: int, stream: int) -> int:
    """Independent sub-stream ``stream`` of ``key``."""
    return mix64_py(key ^ mix64_py(((stream + 1) * GOLDEN) & MASK64))


def uniform_array(key: int, start: int, count: int) -> np.ndarray:
    """Uniforms for counters ``start .. start+count-1`` as a float64 array."""
    return uniform_at(key, np.arange(start, start + count, dtype=np.int64))


def uniform_at(key: int, counters) -> np.ndarray:
    """Uniforms at arbitrary (possibly negative) integer counters."""
    c = np.asarray(counters, dtype=np.int64).astype(np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(key) + (c + _U1) * _U_GOLDEN
        z = (z ^ (z >> _U30)) * _U_M1
        z = (z ^ (z >> _U27)) * _U_M2
        z = z ^ (z >> _U31)
    return (z >> _U11).astype(np.float64) * _INV53
