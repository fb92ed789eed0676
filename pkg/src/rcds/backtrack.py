"""Composition information: ordering a node's children from shingles alone.

All walks of a fixed length that start at the head partition and respect
edge multiplicities are enumerated depth-first, neighbours in ascending hash
order.  A child ordering is then named by its head, its length and its index
among the complete walks of that enumeration.
"""

from collections import defaultdict
from typing import NamedTuple

from .errors import TraceExhausted, TraceNotFound

DEFAULT_BUDGET = 2_000_000


class CompositionInfo(NamedTuple):
    head: int
    count: int
    trace_number: int

    def encode(self) -> bytes:
        return (self.head.to_bytes(8, "big") + self.count.to_bytes(4, "big")
                + self.trace_number.to_bytes(8, "big"))

    @classmethod
    def decode(cls, raw: bytes) -> "CompositionInfo":
        if len(raw) != 20:
            raise ValueError(f"composition info must be 20 bytes, got {len(raw)}")
        return cls(int.from_bytes(raw[:8], "big"), int.from_bytes(raw[8:12], "big"),
                   int.from_bytes(raw[12:], "big"))


class _OverBudget(Exception):
    pass


class LevelGraph:
    """Weighted de Bruijn digraph of one tree level.

    ``adjacency[u]`` is a list of ``[v, multiplicity]`` pairs sorted by ``v``.
    Multiplicities are consumed during an enumeration and restored afterwards;
    ``last_visits`` holds the node-visit count of the most recent operation.
    """

    def __init__(self, shingles, level=None, budget: int = DEFAULT_BUDGET):
        mult = defaultdict(int)
        for sh in shingles:
            if sh.prev and (level is None or sh.level == level):
                key = (sh.prev, sh.curr)
                mult[key] = max(mult[key], sh.occurrence)
        adj = defaultdict(list)
        for (u, v), m in mult.items():
            adj[u].append([v, m])
        for edges in adj.values():
            edges.sort()
        self.adjacency = dict(adj)
        self.budget = budget
        self.last_visits = 0
        self._visits = 0

    def multiplicity(self, u, v) -> int:
        for w, m in self.adjacency.get(u, ()):
            if w == v:
                return m
        return 0

    def _visit(self):
        self._visits += 1
        if self._visits > self.budget:
            raise _OverBudget

    def count_walks(self, start, length) -> int:
        """Complete walks of exactly ``length`` edges from ``start`` (multiplicities respected)."""
        self._visit()
        if length == 0:
            return 1
        # The count below a node depends only on (node, steps left, edges already
        # used on the way down), so revisiting the same state in another order is free.
        memo = {}
        used = defaultdict(int)

        def state(node, left):
            return node, left, tuple(sorted((k, c) for k, c in used.items() if c))

        # frame: [key, edges, next position, edge taken to get here, running total]
        root = state(start, length)
        stack = [[root, self.adjacency.get(start, ()), 0, None, 0]]
        while True:
            frame = stack[-1]
            edges, pos = frame[1], frame[2]
            while pos < len(edges) and edges[pos][1] == 0:
                pos += 1
            if pos < len(edges):
                frame[2] = pos + 1
                edge = edges[pos]
                self._visit()
                left = length - len(stack)
                if left == 0:
                    frame[4] += 1
                    continue
                edge[1] -= 1
                used[id(edge)] += 1
                key = state(edge[0], left)
                if key in memo:
                    frame[4] += memo[key]
                    edge[1] += 1
                    used[id(edge)] -= 1
                else:
                    stack.append([key, self.adjacency.get(edge[0], ()), 0, edge, 0])
                continue
            stack.pop()
            memo[frame[0]] = frame[4]
            if not stack:
                return frame[4]
            frame[3][1] += 1
            used[id(frame[3])] -= 1
            stack[-1][4] += frame[4]


def compose(children, graph: LevelGraph) -> CompositionInfo:
    """Locate the true child ordering among the enumerated walks."""
    children = list(children)
    if not children:
        raise ValueError("a composition needs at least one child")
    count = len(children)
    graph._visits = 0
    taken = []
    trace = 0
    try:
        graph._visit()
        for i in range(count - 1):
            target = children[i + 1]
            remaining = count - 2 - i
            for edge in graph.adjacency.get(children[i], ()):
                if edge[1] == 0:
                    continue
                edge[1] -= 1
                if edge[0] == target:
                    taken.append(edge)
                    graph._visit()
                    break
                trace += graph.count_walks(edge[0], remaining)
                edge[1] += 1
            else:
                raise TraceNotFound(
                    f"edge {children[i]:#x} -> {target:#x} missing from level graph")
    except _OverBudget:
        raise TraceNotFound(f"backtracking budget of {graph.budget} visits exhausted") from None
    finally:
        for edge in taken:
            edge[1] += 1
        graph.last_visits = graph._visits
    return CompositionInfo(children[0], count, trace)


def reconstruct(info: CompositionInfo, graph: LevelGraph) -> list:
    """Return the ``info.trace_number``-th complete walk from ``info.head``."""
    if info.count < 1:
        raise ValueError("composition count must be positive")
    graph._visits = 0
    seq = [info.head]
    taken = []
    trace = info.trace_number
    try:
        graph._visit()
        for i in range(info.count - 1):
            remaining = info.count - 2 - i
            usable = [e for e in graph.adjacency.get(seq[-1], ()) if e[1] > 0]
            if not usable:
                raise TraceExhausted(f"walk dead-ends after {len(seq)} partitions")
            chosen = usable[-1]
            for edge in usable[:-1]:
                edge[1] -= 1
                n = graph.count_walks(edge[0], remaining)
                edge[1] += 1
                if trace < n:
                    chosen = edge
                    break
                trace -= n
            chosen[1] -= 1
            taken.append(chosen)
            seq.append(chosen[0])
            graph._visit()
        if trace != 0:
            raise TraceExhausted(f"fewer than {info.trace_number + 1} complete walks")
    except _OverBudget:
        raise TraceExhausted(f"backtracking budget of {graph.budget} visits exhausted") from None
    finally:
        for edge in taken:
            edge[1] += 1
        graph.last_visits = graph._visits
    return seq
