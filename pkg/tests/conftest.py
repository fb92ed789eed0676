import random

import pytest

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a_reference(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def poly_hash_reference(window: bytes) -> int:
    h = 0
    for b in window:
        h = (h * 257 + b) % ((1 << 61) - 1)
    return h


def brute_force_cuts(values, h):
    """Direct scan of both cut conditions at every index."""
    n = len(values)
    out = []
    for k in range(n):
        lo, hi = max(0, k - h), min(n - 1, k + h)
        if all(values[k] <= values[j] for j in range(lo, hi + 1)) and \
                all(values[k] < values[j] for j in range(lo, k)):
            out.append(k)
    return out


def rand_bytes(rng: random.Random, n: int) -> bytes:
    return bytes(rng.getrandbits(8) for _ in range(n)) if n < 4096 else rng.randbytes(n)


@pytest.fixture
def rng():
    return random.Random(20240611)


def phrase_tree():
    """The two-level example tree for "iHeart Victoria", built by hand."""
    from rcds.tree import TreeNode, hash64

    text = b"iHeart Victoria"
    layout = [(b"iHe", [b"iH", b"e"]), (b"art Vi", [b"ar", b"t ", b"Vi"]),
              (b"ctoria", [b"ct", b"or", b"ia"])]
    root = TreeNode(hash64(text), 0, 0, len(text))
    pos = 0
    for part, pieces in layout:
        node = TreeNode(hash64(part), 1, pos, pos + len(part))
        sub = pos
        for piece in pieces:
            node.children.append(TreeNode(hash64(piece), 2, sub, sub + len(piece)))
            sub += len(piece)
        root.children.append(node)
        pos += len(part)
    return text, root


def level_shingles(sequences, level=1):
    """Shingles of one level whose parents have the given child sequences."""
    from collections import defaultdict

    from rcds.shingle import HashShingle

    seen = defaultdict(int)
    out = []
    for seq in sequences:
        prev = 0
        for h in seq:
            seen[prev, h] += 1
            out.append(HashShingle(prev, h, seen[prev, h], level))
            prev = h
    return out


def enumerate_walks(shingles, head, length):
    """All multiplicity-respecting walks of ``length`` edges, ascending-neighbour order."""
    mult = {}
    for s in shingles:
        if s.prev:
            mult[s.prev, s.curr] = max(mult.get((s.prev, s.curr), 0), s.occurrence)
    out = []

    def walk(path):
        if len(path) == length + 1:
            out.append(list(path))
            return
        u = path[-1]
        for v in sorted(v for (a, v), m in mult.items() if a == u and m > 0):
            mult[u, v] -= 1
            path.append(v)
            walk(path)
            path.pop()
            mult[u, v] += 1

    walk([head])
    return out


def random_level(rng, alphabet, parents, max_len):
    """Random sibling sequences over ``alphabet`` (small alphabets force duplicates)."""
    return [[rng.choice(alphabet) for _ in range(rng.randint(1, max_len))]
            for _ in range(parents)]


def make_tree(root, rng, count, max_size=20000):
    from pathlib import Path

    for i in range(count):
        p = Path(root) / f"d{i % 7}" / f"s{i % 3}" / f"f{i:03d}.bin"
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_bytes(rng.randbytes(rng.randrange(0, max_size)))


def snapshot(root):
    from pathlib import Path

    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(Path(root).rglob("*")) if p.is_file()}


def mutate_tree(root, rng, mutations, additions, deletions):
    """Size-changing edits, new files and removals; returns the touched paths."""
    from pathlib import Path

    files = sorted(snapshot(root))
    picked = rng.sample(files, mutations + deletions)
    changed, deleted = picked[:mutations], picked[mutations:]
    for rel in changed:
        p = Path(root) / rel
        b = p.read_bytes()
        cut = rng.randrange(len(b) + 1)
        p.write_bytes(b[:cut] + rng.randbytes(rng.randint(1, 200)) + b[cut:])
    for rel in deleted:
        (Path(root) / rel).unlink()
    added = []
    for i in range(additions):
        rel = f"new{i % 2}/n{i:02d}_{rng.getrandbits(16)}.bin"
        p = Path(root) / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_bytes(rng.randbytes(rng.randrange(0, 5000)))
        added.append(rel)
    return changed, added, deleted


def diff_oracle(local, remote):
    """Brute-force per-path comparison of two snapshots (name and size only)."""
    return {
        "changed": sorted(p for p in local.keys() & remote.keys()
                          if len(local[p]) != len(remote[p])),
        "new": sorted(remote.keys() - local.keys()),
        "deleted": sorted(local.keys() - remote.keys()),
        "unchanged": sorted(p for p in local.keys() & remote.keys()
                            if len(local[p]) == len(remote[p])),
    }


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
