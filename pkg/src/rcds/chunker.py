"""Content-defined chunking at non-strict local minima of a rolling hash.

A byte string is turned into an array of window hashes (one per ``w``-byte
window, reduced into ``[0, s)``), and a cut is placed at every index whose
value is no larger than anything within ``h`` positions to its right and
strictly smaller than anything within ``h`` positions to its left.  The
asymmetric comparison makes the leftmost of several equal minima win.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import EmptyHashArray

_BIG = np.iinfo(np.int64).max


@dataclass(frozen=True)
class ChunkParams:
    window: int
    space: int
    min_distance: int

    def __post_init__(self):
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.space < 2:
            raise ValueError(f"space must be >= 2, got {self.space}")
        if self.min_distance < 1:
            raise ValueError(f"min_distance must be >= 1, got {self.min_distance}")


class RollingHash:
    """Polynomial hash of a sliding window, base 257 modulo 2**61 - 1.

    Reference (pure Python) counterpart of the compiled bulk routine; each
    :meth:`slide` is O(1).
    """

    MOD = _kernels.MERSENNE61
    BASE = _kernels.ROLL_BASE

    def __init__(self, window: bytes):
        self.width = len(window)
        self._top = pow(self.BASE, self.width - 1, self.MOD)
        h = 0
        for b in window:
            h = (h * self.BASE + b) % self.MOD
        self.value = h

    def slide(self, out_byte: int, in_byte: int) -> int:
        h = (self.value - out_byte * self._top) % self.MOD
        self.value = (h * self.BASE + in_byte) % self.MOD
        return self.value


def as_array(data) -> np.ndarray:
    if isinstance(data, np.ndarray):
        return data.astype(np.uint8, copy=False)
    return np.frombuffer(data, dtype=np.uint8)


def raw_window_hashes(data, window: int) -> np.ndarray:
    """Unreduced rolling hashes of every ``window``-byte window (uint64)."""
    buf = as_array(data)
    return _kernels.rolling_hash(buf, window, _kernels.drop_table(window))


def content_hash_array(data, params: ChunkParams) -> np.ndarray:
    """Window hashes reduced into ``[0, params.space)``; length ``N - w + 1``."""
    if len(data) < params.window:
        raise EmptyHashArray(
            f"input of {len(data)} bytes is shorter than window {params.window}"
        )
    raw = raw_window_hashes(data, params.window)
    return (raw % np.uint64(params.space)).astype(np.int64)


def _window_min(arr: np.ndarray, width: int) -> np.ndarray:
    """``out[i] = min(arr[i:i+width])``, treating positions past the end as +inf."""
    n = arr.shape[0]
    cur = np.concatenate([arr, np.full(width, _BIG, dtype=np.int64)])
    span = 1
    while span * 2 <= width:
        nxt = cur.copy()
        np.minimum(cur[:-span], cur[span:], out=nxt[:-span])
        cur = nxt
        span *= 2
    return np.minimum(cur[:n], cur[width - span:width - span + n])


def segmented_cut_points(values: np.ndarray, seg_starts: np.ndarray,
                         seg_lengths: np.ndarray, h: int):
    """Cut points for many independent hash arrays at once.

    Segment ``i`` is ``values[seg_starts[i] : seg_starts[i] + seg_lengths[i]]``;
    windows are clamped at each segment's ends.  Returns ``(segment_ids,
    local_indices)`` in ascending segment-then-index order.
    """
    seg_starts = np.asarray(seg_starts, dtype=np.int64)
    seg_lengths = np.asarray(seg_lengths, dtype=np.int64)
    keep = seg_lengths > 0
    seg_ids = np.flatnonzero(keep)
    seg_starts, seg_lengths = seg_starts[keep], seg_lengths[keep]
    if seg_ids.size == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty

    # Each segment is preceded by h pad cells so no window crosses segments.
    blocks = seg_lengths + h
    body = int(blocks.sum())
    block_start = np.concatenate([[0], np.cumsum(blocks)[:-1]])
    owner = np.repeat(np.arange(seg_ids.size), blocks)
    within = np.arange(body, dtype=np.int64) - block_start[owner]
    is_val = within >= h
    src = seg_starts[owner] + within - h

    arr = np.full(body + h, _BIG, dtype=np.int64)
    arr[:body][is_val] = values[src[is_val]]

    fwd = _window_min(arr, h)
    q = np.flatnonzero(is_val)
    v = arr[q]
    right = fwd[q + 1]
    left = fwd[q - h]
    cut = (v <= right) & (v < left)
    q = q[cut]
    return seg_ids[owner[q]], within[q] - h


def find_cut_points(hashes, h: int) -> list:
    """Indices of leftmost non-strict local minima within ``h`` positions."""
    if h < 1:
        raise ValueError(f"h must be >= 1, got {h}")
    values = np.asarray(hashes, dtype=np.int64)
    if values.size == 0:
        return []
    _, idx = segmented_cut_points(values, np.array([0]), np.array([values.size]), h)
    return idx.tolist()


def partition(data, params: ChunkParams) -> list:
    """Split ``data`` into ``(start, end)`` spans that tile it in order."""
    n = len(data)
    if n <= params.window:
        return [(0, n)]
    cuts = [k for k in find_cut_points(content_hash_array(data, params),
                                       params.min_distance) if k > 0]
    bounds = [0, *cuts, n]
    return list(zip(bounds[:-1], bounds[1:]))
