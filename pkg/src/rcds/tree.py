"""Hash partition trees.

Level ``l`` of the tree is produced by chunking every level ``l-1`` node with
the same parameters ``s = w * p**(L-l+1)`` and ``h = N // p**l``, where ``N``
is the length of the whole string.  Every node is identified by the FNV-1a
64-bit hash of its bytes.
"""

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .chunker import ChunkParams, as_array, raw_window_hashes, segmented_cut_points
from .errors import CatalogCollision


@dataclass(frozen=True)
class TreeParams:
    levels: int = 4
    branch: int = 8
    window: int = 16

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        if self.branch < 2:
            raise ValueError(f"branch must be >= 2, got {self.branch}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")


@dataclass(eq=False)
class TreeNode:
    hash: int
    level: int
    start: int
    end: int
    children: list = field(default_factory=list)

    @property
    def span(self):
        return (self.start, self.end)

    @property
    def is_leaf(self):
        return not self.children

    def __len__(self):
        return self.end - self.start


def hash64(data) -> int:
    """FNV-1a, 64-bit."""
    buf = as_array(data)
    out = _kernels.fnv1a_spans(buf, np.zeros(1, np.int64), np.array([buf.size], np.int64))
    return int(out[0])


class HashCatalog:
    """Maps node hashes to the bytes they stand for."""

    def __init__(self):
        self._items = {}

    def insert(self, key: int, value) -> None:
        old = self._items.get(key)
        if old is None:
            self._items[key] = value
        elif len(old) != len(value) or old != value:
            raise CatalogCollision(f"distinct strings share hash {key:#018x}")

    def lookup(self, key: int) -> bytes:
        return bytes(self._items[key])

    def get(self, key: int, default=None):
        value = self._items.get(key)
        return default if value is None else bytes(value)

    def __contains__(self, key):
        return key in self._items

    def __len__(self):
        return len(self._items)

    def keys(self):
        return self._items.keys()


def schedule(level: int, n: int, params: TreeParams) -> ChunkParams:
    if not 1 <= level <= params.levels:
        raise ValueError(f"level {level} outside [1, {params.levels}]")
    space = params.window * params.branch ** (params.levels - level + 1)
    return ChunkParams(
        window=params.window,
        space=max(2, space),
        min_distance=max(1, n // params.branch ** level),
    )


def build_tree(data, params: TreeParams):
    """Partition ``data`` recursively; returns ``(root, catalog)``."""
    view = memoryview(data).cast("B") if not isinstance(data, memoryview) else data
    buf = as_array(view)
    n = buf.size
    w = params.window
    catalog = HashCatalog()
    root = TreeNode(hash64(buf), 0, 0, n)
    catalog.insert(root.hash, view)

    raw = raw_window_hashes(buf, w) if n >= w else None
    frontier = [root]
    for level in range(1, params.levels + 1):
        frontier = [node for node in frontier if len(node) > w]
        if not frontier:
            break
        cp = schedule(level, n, params)
        starts = np.fromiter((nd.start for nd in frontier), np.int64, len(frontier))
        ends = np.fromiter((nd.end for nd in frontier), np.int64, len(frontier))
        values = (raw % np.uint64(cp.space)).astype(np.int64)
        seg, local = segmented_cut_points(values, starts, ends - starts - w + 1,
                                          cp.min_distance)
        inner = local > 0
        seg, local = seg[inner], local[inner]
        if seg.size == 0:
            break
        split = np.unique(seg)
        child_start = np.sort(np.concatenate([starts[split], starts[seg] + local]))
        owner = split[np.searchsorted(starts[split], child_start, side="right") - 1]
        child_end = np.empty_like(child_start)
        child_end[:-1] = child_start[1:]
        last = np.ones(child_start.size, dtype=bool)
        last[:-1] = owner[1:] != owner[:-1]
        child_end[last] = ends[owner[last]]
        hashes = _kernels.fnv1a_spans(buf, child_start, child_end)

        nxt = []
        for h, a, b, o in zip(hashes.tolist(), child_start.tolist(),
                              child_end.tolist(), owner.tolist()):
            node = TreeNode(h, level, a, b)
            frontier[o].children.append(node)
            catalog.insert(h, view[a:b])
            nxt.append(node)
        frontier = nxt
    return root, catalog


def levels_of(root: TreeNode) -> list:
    """Nodes grouped by level, each level in left-to-right order."""
    out = [[root]]
    while True:
        nxt = [c for node in out[-1] for c in node.children]
        if not nxt:
            return out
        out.append(nxt)


def iter_nodes(root: TreeNode):
    for level in levels_of(root):
        yield from level


def tree_stats(root: TreeNode) -> dict:
    """Node count, realized per-level branching and maximum in-level duplication."""
    lv = levels_of(root)
    branching = []
    for parents in lv[:-1]:
        inner = [len(p.children) for p in parents if p.children]
        branching.append(sum(inner) / len(inner) if inner else 0.0)
    dup = max((max(Counter(nd.hash for nd in nodes).values()) for nodes in lv[1:]),
              default=1)
    return {
        "nodes": sum(len(x) for x in lv),
        "depth": len(lv) - 1,
        "branching": branching,
        "max_duplication": dup,
    }
