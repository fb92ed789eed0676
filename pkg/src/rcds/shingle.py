"""Partition tree <-> multiset of hash shingles.

Every node's ordered child list contributes one head shingle ``(0, c1)`` and
one shingle per adjacent pair ``(c_i, c_{i+1})``.  Repeats of the same
adjacency within a level are told apart by a 1-based occurrence index, so the
multiset becomes a plain set that set reconciliation can work on.
"""

from collections import defaultdict
from typing import NamedTuple

import numpy as np

from .errors import PreconditionViolated
from .tree import levels_of

KEY_BYTES = 24
_KEY_DTYPE = np.dtype(">u8")


class HashShingle(NamedTuple):
    prev: int
    curr: int
    occurrence: int
    level: int

    def encode(self) -> bytes:
        return (self.prev.to_bytes(8, "big") + self.curr.to_bytes(8, "big")
                + self.occurrence.to_bytes(4, "big") + self.level.to_bytes(1, "big")
                + b"\0\0\0")

    @classmethod
    def decode(cls, raw: bytes) -> "HashShingle":
        if len(raw) != KEY_BYTES:
            raise ValueError(f"shingle key must be {KEY_BYTES} bytes, got {len(raw)}")
        return cls(int.from_bytes(raw[0:8], "big"), int.from_bytes(raw[8:16], "big"),
                   int.from_bytes(raw[16:20], "big"), raw[20])


class ShingleSet:
    """Immutable set of :class:`HashShingle` with a per-level view."""

    def __init__(self, shingles=()):
        self._items = frozenset(shingles)
        self._levels = None

    def __contains__(self, item):
        return item in self._items

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __eq__(self, other):
        if isinstance(other, ShingleSet):
            return self._items == other._items
        return NotImplemented

    def __hash__(self):
        return hash(self._items)

    def __repr__(self):
        return f"ShingleSet({len(self)} shingles)"

    @property
    def items(self) -> frozenset:
        return self._items

    def level(self, level: int) -> list:
        if self._levels is None:
            grouped = defaultdict(list)
            for sh in self._items:
                grouped[sh.level].append(sh)
            self._levels = dict(grouped)
        return self._levels.get(level, [])

    def levels(self):
        self.level(0)
        return sorted(self._levels)

    def to_keys(self) -> np.ndarray:
        """Keys as an ``(n, 3)`` uint64 array: prev, curr, occurrence/level word."""
        return shingles_to_keys(self._items)

    def to_bytes(self) -> bytes:
        return encode_keys(self.to_keys())

    @classmethod
    def from_bytes(cls, raw: bytes) -> "ShingleSet":
        return cls(keys_to_shingles(decode_keys(raw)))


def shingles_to_keys(shingles) -> np.ndarray:
    rows = [(s.prev, s.curr, (s.occurrence << 32) | (s.level << 24)) for s in shingles]
    if not rows:
        return np.empty((0, 3), dtype=np.uint64)
    return np.array(rows, dtype=np.uint64)


def keys_to_shingles(keys: np.ndarray) -> list:
    return [HashShingle(p, c, x >> 32, (x >> 24) & 0xFF)
            for p, c, x in np.asarray(keys, dtype=np.uint64).tolist()]


def encode_keys(keys: np.ndarray) -> bytes:
    return np.ascontiguousarray(keys, dtype=np.uint64).astype(_KEY_DTYPE).tobytes()


def decode_keys(raw: bytes) -> np.ndarray:
    if len(raw) % KEY_BYTES:
        raise ValueError(f"key blob length {len(raw)} is not a multiple of {KEY_BYTES}")
    return np.frombuffer(raw, dtype=_KEY_DTYPE).astype(np.uint64).reshape(-1, 3)


def tree_to_shingles(root) -> ShingleSet:
    out = [HashShingle(0, root.hash, 1, 0)]
    for parents in levels_of(root)[:-1]:
        seen = defaultdict(int)
        for parent in parents:
            prev = 0
            for child in parent.children:
                seen[prev, child.hash] += 1
                out.append(HashShingle(prev, child.hash, seen[prev, child.hash], child.level))
                prev = child.hash
    return ShingleSet(out)


def apply_delta(local: ShingleSet, local_minus_remote, remote_minus_local) -> ShingleSet:
    """``(local - local_minus_remote) | remote_minus_local``."""
    drop = frozenset(local_minus_remote)
    add = frozenset(remote_minus_local)
    if not drop <= local.items:
        raise PreconditionViolated(f"{len(drop - local.items)} removed shingles not held locally")
    if add & local.items:
        raise PreconditionViolated(f"{len(add & local.items)} added shingles already held locally")
    return ShingleSet((local.items - drop) | add)


def unknown_hashes(remote_set: ShingleSet, catalog) -> list:
    """Hashes of ``remote_set`` missing from ``catalog``, deepest level first."""
    deepest = {}
    for sh in remote_set:
        for h in (sh.prev, sh.curr):
            if h and h not in catalog and deepest.get(h, -1) < sh.level:
                deepest[h] = sh.level
    return sorted(deepest.items(), key=lambda item: (-item[1], item[0]))
