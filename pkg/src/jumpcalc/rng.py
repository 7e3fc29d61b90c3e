"""Counter-based random streams.

Every path owns a 64-bit stream key derived from ``(seed, path_index)``.
Draw number ``k`` of a stream is a pure function of the key and ``k``, so
paths can be simulated in any order, in any batch, on any thread, and
still consume exactly the same random numbers.
"""

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_PATH_SALT = 0xD1B54A32D192ED03
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_TWO53 = 2.0 ** -53


def _mix(z):
    # splitmix64 finalizer; z is a uint64 array, arithmetic wraps mod 2**64
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _mix_int(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def stream_key(seed: int, path_index: int) -> int:
    """Key of the stream for one path."""
    if path_index < 0:
        raise ValueError("path_index must be nonnegative")
    base = _mix_int((seed & _MASK) + 0x9E3779B97F4A7C15)
    return _mix_int(base ^ _mix_int((path_index * _PATH_SALT + 1) & _MASK))


def stream_keys(seed: int, path_indices) -> np.ndarray:
    """Vectorized :func:`stream_key` over an array of path indices."""
    idx = np.asarray(path_indices, dtype=np.int64)
    if idx.size and idx.min() < 0:
        raise ValueError("path indices must be nonnegative")
    base = np.uint64(_mix_int((seed & _MASK) + 0x9E3779B97F4A7C15))
    salted = idx.astype(np.uint64) * np.uint64(_PATH_SALT) + np.uint64(1)
    return _mix(base ^ _mix(salted))


def raw_bits(keys: np.ndarray, counters: np.ndarray) -> np.ndarray:
    """64 random bits for draw ``counters[i]`` of stream ``keys[i]``."""
    c = np.asarray(counters).astype(np.uint64)
    return _mix(np.asarray(keys, dtype=np.uint64) + (c + np.uint64(1)) * _GOLDEN)


def uniform(keys: np.ndarray, counters: np.ndarray) -> np.ndarray:
    """Uniform draws on the open interval (0, 1), 53 bits of resolution."""
    bits = raw_bits(keys, counters) >> _S11
    return (bits.astype(np.float64) + 0.5) * _TWO53


def exponential(keys: np.ndarray, counters: np.ndarray) -> np.ndarray:
    """Unit-mean exponential draws, ``-log(U)``."""
    return -np.log(uniform(keys, counters))
