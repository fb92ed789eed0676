"""Set reconciliation of fixed-width 24-byte keys.

:class:`Iblt` is an invertible Bloom lookup table; :class:`IbltEngine` runs
the interactive protocol over a :class:`~rcds.transport.Transport`:

1. (optional) both peers exchange an ESTIMATE: set size plus a 64-bucket
   one-permutation min-hash sketch, and derive the same initial table size;
2. the responder sends its table (IBLT_ROUND);
3. the initiator subtracts its own table and peels.  On success it sends a
   DELTA_ACK with both differences; on failure it sends a header-only
   IBLT_ROUND naming the doubled size (or size 0 to give up).
"""

import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from ._kernels import FNV_OFFSET, FNV_PRIME
from .errors import MaxRoundsExceeded, ParamMismatch, PeelFailure
from .shingle import KEY_BYTES, decode_keys, encode_keys, keys_to_shingles, shingles_to_keys
from .transport import Frame, Kind

NUM_HASHES = 4
SKETCH_BUCKETS = 64
MIN_TABLE = 16
DEFAULT_TABLE = 64
MAX_DOUBLINGS = 8

_MASK64 = (1 << 64) - 1
_U_PRIME = np.uint64(FNV_PRIME)
_EMPTY_SAMPLE = np.uint64(_MASK64)
_CELL_DTYPE = np.dtype([("count", ">i8"), ("k0", ">u8"), ("k1", ">u8"), ("k2", ">u8"),
                        ("check", ">u8")])
_ROUND_HEADER = struct.Struct(">IB")


def key_rows(keys) -> np.ndarray:
    """Normalize 24-byte keys (bytes objects or an (n, 3) array) to uint64 rows."""
    if isinstance(keys, np.ndarray):
        return keys.astype(np.uint64, copy=False).reshape(-1, 3)
    keys = list(keys)
    if not keys:
        return np.empty((0, 3), dtype=np.uint64)
    return decode_keys(b"".join(keys))


def _salted_state(rows: np.ndarray, salt: int) -> np.ndarray:
    """FNV-1a state after hashing ``key || salt`` for every row (== hash64 of that)."""
    h = np.full(rows.shape[0], FNV_OFFSET, dtype=np.uint64)
    for word in range(3):
        col = rows[:, word]
        for shift in range(56, -8, -8):
            h ^= (col >> np.uint64(shift)) & np.uint64(0xFF)
            h *= _U_PRIME
    for shift in range(56, -8, -8):
        h ^= np.uint64((salt >> shift) & 0xFF)
        h *= _U_PRIME
    return h


def _salted_state_one(row, salt: int) -> int:
    h = FNV_OFFSET
    for word in row:
        for shift in range(56, -8, -8):
            h = ((h ^ ((word >> shift) & 0xFF)) * FNV_PRIME) & _MASK64
    for shift in range(56, -8, -8):
        h = ((h ^ ((salt >> shift) & 0xFF)) * FNV_PRIME) & _MASK64
    return h


def _fmix(x):
    # murmur3 finalizer; FNV-1a's low bits are too weak to reduce mod m directly
    x = x ^ (x >> np.uint64(33))
    x = x * np.uint64(0xFF51AFD7ED558CCD)
    x = x ^ (x >> np.uint64(33))
    x = x * np.uint64(0xC4CEB9FE1A85EC53)
    return x ^ (x >> np.uint64(33))


def _fmix_one(x):
    x ^= x >> 33
    x = (x * 0xFF51AFD7ED558CCD) & _MASK64
    x ^= x >> 33
    x = (x * 0xC4CEB9FE1A85EC53) & _MASK64
    return x ^ (x >> 33)


def _candidate(state, i):
    return _fmix((state ^ np.uint64(i)) * _U_PRIME)


def cell_indices(rows: np.ndarray, salt: int, m: int, k: int = NUM_HASHES,
                 state: np.ndarray = None) -> np.ndarray:
    """``k`` distinct cell indices per row from ``fmix64(hash64(key||salt||i))``, i = 0, 1, ..."""
    if m < k:
        raise ValueError(f"table of {m} cells cannot hold {k} distinct indices")
    if state is None:
        state = _salted_state(rows, salt)
    n = rows.shape[0]
    out = np.full((n, k), -1, dtype=np.int64)
    filled = np.zeros(n, dtype=np.int64)
    i = 0
    while n and filled.min() < k:
        cand = (_candidate(state, i) % np.uint64(m)).astype(np.int64)
        fresh = (filled < k) & ~(out == cand[:, None]).any(axis=1)
        rows_ix = np.flatnonzero(fresh)
        out[rows_ix, filled[rows_ix]] = cand[rows_ix]
        filled[rows_ix] += 1
        i += 1
        if i > 255:
            raise RuntimeError("could not derive distinct cell indices")
    return out


def _cell_indices_one(row, salt: int, m: int, k: int = NUM_HASHES) -> list:
    state = _salted_state_one(row, salt)
    out = []
    i = 0
    while len(out) < k:
        c = _fmix_one(((state ^ i) * FNV_PRIME) & _MASK64) % m
        if c not in out:
            out.append(c)
        i += 1
    return out


class Iblt:
    def __init__(self, size: int, salt: int, num_hashes: int = NUM_HASHES):
        if size < num_hashes:
            raise ValueError(f"table size {size} smaller than num_hashes {num_hashes}")
        self.size = size
        self.salt = salt
        self.num_hashes = num_hashes
        self.count = np.zeros(size, dtype=np.int64)
        self.key_sum = np.zeros((size, 3), dtype=np.uint64)
        self.check_sum = np.zeros(size, dtype=np.uint64)

    def _update(self, rows, sign, state=None):
        rows = key_rows(rows)
        if rows.shape[0] == 0:
            return self
        if state is None:
            state = _salted_state(rows, self.salt)
        idx = cell_indices(rows, self.salt, self.size, self.num_hashes, state)
        flat = idx.ravel()
        rep = np.repeat(np.arange(rows.shape[0]), self.num_hashes)
        np.add.at(self.count, flat, sign)
        for word in range(3):
            np.bitwise_xor.at(self.key_sum[:, word], flat, rows[rep, word])
        np.bitwise_xor.at(self.check_sum, flat, state[rep])
        return self

    def insert(self, key):
        return self._update([key] if isinstance(key, bytes) else key, 1)

    def delete(self, key):
        return self._update([key] if isinstance(key, bytes) else key, -1)

    def insert_many(self, rows, state=None):
        return self._update(rows, 1, state)

    def _check_compatible(self, other):
        if (self.size, self.num_hashes, self.salt) != (other.size, other.num_hashes, other.salt):
            raise ParamMismatch(
                f"IBLT parameters differ: {(self.size, self.num_hashes)} vs "
                f"{(other.size, other.num_hashes)} (or salt)")

    def subtract(self, other: "Iblt") -> "Iblt":
        self._check_compatible(other)
        out = Iblt(self.size, self.salt, self.num_hashes)
        out.count = self.count - other.count
        out.key_sum = self.key_sum ^ other.key_sum
        out.check_sum = self.check_sum ^ other.check_sum
        return out

    def is_empty(self) -> bool:
        return not (self.count.any() or self.key_sum.any() or self.check_sum.any())

    def peel(self):
        """Recover ``(plus_keys, minus_keys)`` as ``(n, 3)`` arrays or raise PeelFailure."""
        count = self.count.tolist()
        ks = self.key_sum.tolist()
        chk = self.check_sum.tolist()
        found = {1: [], -1: []}
        seen = set()
        stack = [i for i, c in enumerate(count) if c == 1 or c == -1]
        while stack:
            i = stack.pop()
            sign = count[i]
            if sign != 1 and sign != -1:
                continue
            row = tuple(ks[i])
            state = _salted_state_one(row, self.salt)
            if state != chk[i]:
                continue
            idx = _cell_indices_one(row, self.salt, self.size, self.num_hashes)
            if i not in idx or row in seen:
                continue
            seen.add(row)
            found[sign].append(row)
            for j in idx:
                count[j] -= sign
                a = ks[j]
                ks[j] = [a[0] ^ row[0], a[1] ^ row[1], a[2] ^ row[2]]
                chk[j] ^= state
                if count[j] == 1 or count[j] == -1:
                    stack.append(j)
        if any(count) or any(chk) or any(any(r) for r in ks):
            raise PeelFailure(f"peeling stalled with {sum(1 for c in count if c)} nonzero cells")

        def arr(rows):
            return np.array(rows, dtype=np.uint64).reshape(-1, 3)
        return arr(found[1]), arr(found[-1])

    def to_bytes(self) -> bytes:
        cells = np.empty(self.size, dtype=_CELL_DTYPE)
        cells["count"] = self.count
        cells["k0"], cells["k1"], cells["k2"] = self.key_sum.T
        cells["check"] = self.check_sum
        return _ROUND_HEADER.pack(self.size, self.num_hashes) + cells.tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes, salt: int) -> "Iblt":
        size, k = _ROUND_HEADER.unpack_from(raw)
        body = raw[_ROUND_HEADER.size:]
        if len(body) != size * _CELL_DTYPE.itemsize:
            raise ValueError(f"IBLT payload holds {len(body)} bytes, expected "
                             f"{size * _CELL_DTYPE.itemsize} for {size} cells")
        cells = np.frombuffer(body, dtype=_CELL_DTYPE)
        t = cls(size, salt, k)
        t.count = cells["count"].astype(np.int64)
        t.key_sum = np.stack([cells["k0"], cells["k1"], cells["k2"]], axis=1).astype(np.uint64)
        t.check_sum = cells["check"].astype(np.uint64)
        return t


# -- difference estimation ---------------------------------------------------

def minhash_sketch(rows: np.ndarray, salt: int, state: np.ndarray = None) -> np.ndarray:
    """Per-bucket minimum of the salted key hash (one-permutation min-hash)."""
    rows = key_rows(rows)
    if state is None:
        state = _salted_state(rows, salt)
    sketch = np.full(SKETCH_BUCKETS, _EMPTY_SAMPLE, dtype=np.uint64)
    if rows.shape[0]:
        mixed = _fmix(state)
        bucket = (mixed % np.uint64(SKETCH_BUCKETS)).astype(np.int64)
        np.minimum.at(sketch, bucket, mixed >> np.uint64(6))
    return sketch


def estimate_difference(size_a: int, sketch_a, size_b: int, sketch_b) -> float:
    """Symmetric-difference estimate from two sketches and the set sizes."""
    sketch_a = np.asarray(sketch_a, dtype=np.uint64)
    sketch_b = np.asarray(sketch_b, dtype=np.uint64)
    occupied = (sketch_a != _EMPTY_SAMPLE) | (sketch_b != _EMPTY_SAMPLE)
    if not occupied.any():
        return 0.0
    jaccard = float(((sketch_a == sketch_b) & occupied).sum()) / float(occupied.sum())
    return (size_a + size_b) * (1.0 - jaccard) / (1.0 + jaccard)


def initial_table_size(estimate) -> int:
    if estimate is None:
        return DEFAULT_TABLE
    return max(MIN_TABLE, int(np.ceil(2 * estimate)))


def encode_estimate(size: int, sketch: np.ndarray) -> bytes:
    return struct.pack(">Q", size) + np.asarray(sketch, dtype=">u8").tobytes()


def decode_estimate(raw: bytes):
    (size,) = struct.unpack_from(">Q", raw)
    sketch = np.frombuffer(raw[8:], dtype=">u8").astype(np.uint64)
    if sketch.size != SKETCH_BUCKETS:
        raise ValueError(f"estimate carries {sketch.size} samples, expected {SKETCH_BUCKETS}")
    return size, sketch


def encode_delta(first: np.ndarray, second: np.ndarray) -> bytes:
    return b"".join(struct.pack(">I", len(k)) + encode_keys(k) for k in (first, second))


def decode_delta(raw: bytes):
    out = []
    pos = 0
    for _ in range(2):
        (n,) = struct.unpack_from(">I", raw, pos)
        pos += 4
        out.append(decode_keys(raw[pos:pos + n * KEY_BYTES]))
        pos += n * KEY_BYTES
    return out[0], out[1]


# -- engines -----------------------------------------------------------------

class ReconciliationEngine(ABC):
    """Computes the bilateral difference of two remote key sets."""

    @abstractmethod
    def reconcile(self, rows: np.ndarray, link, role: str):
        """Return ``(local_minus_remote, remote_minus_local)`` as (n, 3) uint64 arrays."""


@dataclass
class ReconStats:
    rounds: int = 0
    table_sizes: list = field(default_factory=list)
    estimate: float = None


def _row_set(rows):
    return set(map(tuple, rows.tolist()))


class IbltEngine(ReconciliationEngine):
    def __init__(self, salt: int, num_hashes: int = NUM_HASHES,
                 max_doublings: int = MAX_DOUBLINGS, initial_size: int = None,
                 use_estimate: bool = True):
        self.salt = salt
        self.num_hashes = num_hashes
        self.max_doublings = max_doublings
        self.initial_size = initial_size
        self.use_estimate = use_estimate and initial_size is None
        self.stats = ReconStats()

    def _table(self, rows, state, size):
        return Iblt(size, self.salt, self.num_hashes).insert_many(rows, state)

    def reconcile(self, rows, link, role):
        if role not in ("initiator", "responder"):
            raise ValueError(f"role must be initiator or responder, got {role!r}")
        rows = key_rows(rows)
        state = _salted_state(rows, self.salt)
        self.stats = ReconStats()

        size = self.initial_size
        if self.use_estimate:
            mine = encode_estimate(rows.shape[0], minhash_sketch(rows, self.salt, state))
            if role == "initiator":
                link.send(Frame(Kind.ESTIMATE, mine))
                theirs = _expect(link, Kind.ESTIMATE).payload
            else:
                theirs = _expect(link, Kind.ESTIMATE).payload
                link.send(Frame(Kind.ESTIMATE, mine))
            a, b = decode_estimate(mine), decode_estimate(theirs)
            est = estimate_difference(a[0], a[1], b[0], b[1])
            self.stats.estimate = est
            size = initial_table_size(est)
        elif size is None:
            size = DEFAULT_TABLE
        size = max(size, self.num_hashes)

        if role == "responder":
            return self._respond(rows, state, size, link)
        return self._initiate(rows, state, size, link)

    def _respond(self, rows, state, size, link):
        while True:
            link.send(Frame(Kind.IBLT_ROUND, self._table(rows, state, size).to_bytes()))
            self.stats.rounds += 1
            self.stats.table_sizes.append(size)
            reply = link.receive()
            if reply.base_kind == Kind.DELTA_ACK:
                theirs_only, mine_only = decode_delta(reply.payload)
                return mine_only, theirs_only
            if reply.base_kind != Kind.IBLT_ROUND:
                raise ConnectionError(f"unexpected {reply.base_kind.name} during reconciliation")
            size, _ = _ROUND_HEADER.unpack_from(reply.payload)
            if size == 0:
                raise MaxRoundsExceeded(f"peer gave up after {self.stats.rounds} rounds")

    def _initiate(self, rows, state, size, link):
        local = None
        doublings = 0
        while True:
            remote = Iblt.from_bytes(_expect(link, Kind.IBLT_ROUND).payload, self.salt)
            self.stats.rounds += 1
            self.stats.table_sizes.append(remote.size)
            if remote.size != size or remote.num_hashes != self.num_hashes:
                raise ParamMismatch(f"peer sent a {remote.size}-cell table, expected {size}")
            diff = self._table(rows, state, size).subtract(remote)
            try:
                mine_only, theirs_only = diff.peel()
                if local is None:
                    local = _row_set(rows)
                if not _row_set(mine_only) <= local or _row_set(theirs_only) & local:
                    raise PeelFailure("peeled keys inconsistent with the local set")
            except PeelFailure:
                doublings += 1
                if doublings > self.max_doublings:
                    link.send(Frame(Kind.IBLT_ROUND, _ROUND_HEADER.pack(0, self.num_hashes)))
                    raise MaxRoundsExceeded(
                        f"no successful peel after {self.stats.rounds} rounds") from None
                size *= 2
                link.send(Frame(Kind.IBLT_ROUND, _ROUND_HEADER.pack(size, self.num_hashes)))
                continue
            link.send(Frame(Kind.DELTA_ACK, encode_delta(mine_only, theirs_only)))
            return mine_only, theirs_only


def _expect(link, kind):
    frame = link.receive()
    if frame.base_kind != kind:
        raise ConnectionError(f"expected {kind.name}, got {frame.base_kind.name}")
    return frame


def reconcile_sets(local, link, role, engine: ReconciliationEngine):
    """Shingle-level wrapper: returns ``(local_minus_remote, remote_minus_local)`` sets."""
    mine, theirs = engine.reconcile(shingles_to_keys(local), link, role)
    return set(keys_to_shingles(mine)), set(keys_to_shingles(theirs))
