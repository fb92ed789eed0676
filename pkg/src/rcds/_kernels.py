"""Compiled inner loops: FNV-1a over byte spans and the polynomial rolling hash."""

import numpy as np
from numba import njit

FNV_OFFSET = 14695981039346656037
FNV_PRIME = 1099511628211
MERSENNE61 = (1 << 61) - 1
ROLL_BASE = 257

_U_OFFSET = np.uint64(FNV_OFFSET)
_U_PRIME = np.uint64(FNV_PRIME)
_U_M61 = np.uint64(MERSENNE61)


@njit(cache=True)
def fnv1a_spans(buf, starts, ends):
    out = np.empty(starts.shape[0], dtype=np.uint64)
    for i in range(starts.shape[0]):
        h = _U_OFFSET
        for j in range(starts[i], ends[i]):
            h = (h ^ np.uint64(buf[j])) * _U_PRIME
        out[i] = h
    return out


@njit(cache=True)
def _reduce61(x):
    x = (x & _U_M61) + (x >> np.uint64(61))
    if x >= _U_M61:
        x -= _U_M61
    return x


@njit(cache=True)
def _times257(h):
    # h < 2**61; h * 256 folded through 2**61 == 1 (mod M61)
    hi = ((h << np.uint64(8)) & _U_M61) + (h >> np.uint64(53))
    return _reduce61(hi + h)


@njit(cache=True)
def rolling_hash(buf, window, drop_table):
    """Raw (unreduced by s) window hashes; ``drop_table[b] = b * 257**(w-1) mod M61``."""
    n = buf.shape[0] - window + 1
    out = np.empty(max(n, 0), dtype=np.uint64)
    if n <= 0:
        return out
    h = np.uint64(0)
    for j in range(window):
        h = _reduce61(_times257(h) + np.uint64(buf[j]))
    out[0] = h
    for i in range(1, n):
        h = h + _U_M61 - drop_table[buf[i - 1]]
        if h >= _U_M61:
            h -= _U_M61
        h = _reduce61(_times257(h) + np.uint64(buf[i + window - 1]))
        out[i] = h
    return out


def drop_table(window):
    top = pow(ROLL_BASE, window - 1, MERSENNE61)
    return np.array([(b * top) % MERSENNE61 for b in range(256)], dtype=np.uint64)
