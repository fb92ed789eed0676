"""Workloads, analytic formulas and the measurement harness.

CSV schema of :func:`run_sweep` (one row per grid cell and seed), in order:

    size, budget, bursts, levels, branch, window, seed,
    converged, fallback, total_bytes, literal_bytes, setrecon_bytes,
    request_bytes, composition_bytes, overhead_bytes, rounds,
    partitions_remote, unmatched, unmatched_pct, max_duplication,
    backtrack_visits, baseline_bytes, failure

``setrecon_bytes`` counts estimate and IBLT frames, ``overhead_bytes`` the
hello, verify and fallback frames.  ``baseline_bytes`` is blank unless the
fixed-block baseline was requested.  With ``timings=True`` the columns
``t_tree, t_setrecon, t_reconstruct, t_total`` (seconds) are appended; they
are off by default so that reruns produce identical rows.
"""

import csv
import io
import itertools
import math
import statistics
from dataclasses import dataclass

import mpmath
import numpy as np

from .errors import RcdsError
from .protocol import SessionConfig, sync_loopback
from .tree import TreeParams, hash64

COLUMNS = ["size", "budget", "bursts", "levels", "branch", "window", "seed",
           "converged", "fallback", "total_bytes", "literal_bytes", "setrecon_bytes",
           "request_bytes", "composition_bytes", "overhead_bytes", "rounds",
           "partitions_remote", "unmatched", "unmatched_pct", "max_duplication",
           "backtrack_visits", "baseline_bytes", "failure"]
TIME_COLUMNS = ["t_tree", "t_setrecon", "t_reconstruct", "t_total"]


# -- workloads -----------------------------------------------------------------

@dataclass(frozen=True)
class EditBurst:
    kind: str          # "insert" or "delete"
    position: int
    length: int
    payload: bytes = b""


def generate_edits(data: bytes, burst_budget: int, max_bursts: int, seed: int):
    """Apply up to ``max_bursts`` random insert/delete bursts; returns ``(edited, bursts)``.

    Burst lengths are uniform in ``[1, 2 * budget / max_bursts]`` and the sum
    of all lengths never exceeds ``burst_budget`` (0 is treated as 1).
    """
    if max_bursts < 1:
        raise ValueError("max_bursts must be >= 1")
    budget = max(1, int(burst_budget))
    rng = np.random.default_rng(seed)
    top = max(1, (2 * budget) // max_bursts)
    out = bytearray(data)
    bursts = []
    for _ in range(max_bursts):
        if budget == 0:
            break
        length = min(int(rng.integers(1, top + 1)), budget)
        if out and rng.random() < 0.5:
            pos = int(rng.integers(0, len(out)))
            length = min(length, len(out) - pos)
            del out[pos:pos + length]
            bursts.append(EditBurst("delete", pos, length))
        else:
            pos = int(rng.integers(0, len(out) + 1))
            payload = rng.integers(0, 256, length, dtype=np.uint8).tobytes()
            out[pos:pos] = payload
            bursts.append(EditBurst("insert", pos, length, payload))
        budget -= length
    return bytes(out), bursts


def random_bytes(n: int, seed: int) -> bytes:
    return np.random.default_rng(seed).integers(0, 256, n, dtype=np.uint8).tobytes()


# -- formulas --------------------------------------------------------------------

def partition_probability(s: int, h: int) -> float:
    """Sum over j = 0..s of (1/s) (j/s)^(2h)."""
    if s < 1 or h < 1:
        raise ValueError("s and h must be >= 1")
    return math.fsum((j / s) ** (2 * h) for j in range(s + 1)) / s


def partition_probability_mc(s: int, h: int, trials: int, seed: int = 0,
                             batch: int = 200_000):
    """Frequency with which the centre of ``2h+1`` i.i.d. uniform values on
    ``[0, s)`` is no larger than every other; returns ``(estimate, std_error)``."""
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < trials:
        n = min(batch, trials - done)
        arr = rng.integers(0, s, (n, 2 * h + 1), dtype=np.int32)
        hits += int(np.count_nonzero(arr[:, h] <= arr.min(axis=1)))
        done += n
    p = hits / trials
    return p, math.sqrt(p * (1 - p) / trials)


def failure_bound(n: int, k: int, b: int) -> float:
    """Collision term plus reconciliation term, in 60-digit arithmetic."""
    if n < 1 or k < 1:
        raise ValueError("n and k must be >= 1")
    if b not in (32, 64):
        raise ValueError("b must be 32 or 64")
    with mpmath.workdps(60):
        space = mpmath.mpf(2) ** b
        collision = -mpmath.expm1(-mpmath.mpf(n + 1) ** 2 / (2 * (space + 1 - n)))
        recon = (mpmath.mpf(n - 1) / space ** 2) ** k
        return float(collision + recon)


# -- fixed-block baseline -------------------------------------------------------------

def fixed_block_cost(old: bytes, new: bytes, block: int = 64) -> dict:
    """Bytes for a simple fixed-block delta scheme (not rsync itself).

    The holder of ``old`` sends a 4-byte weak and 8-byte strong checksum per
    aligned block; the holder of ``new`` scans every offset for weak matches
    and answers with 4-byte block references and length-prefixed literals.
    """
    a = np.frombuffer(old, dtype=np.uint8)
    nb = len(old) // block
    signature = 12 * nb
    table = {}
    if nb:
        blocks = a[:nb * block].reshape(nb, block).astype(np.int64)
        weights = np.arange(block, 0, -1, dtype=np.int64)
        weak = ((blocks.sum(1) & 0xFFFF) | (((blocks * weights).sum(1) & 0xFFFF) << 16))
        for i, w in enumerate(weak.tolist()):
            table.setdefault(w, []).append(i)

    b = np.frombuffer(new, dtype=np.uint8).astype(np.int64)
    matches = literal = 0
    runs = 0
    pos = 0
    if table and b.size >= block:
        s = np.concatenate([[0], np.cumsum(b)])
        t = np.concatenate([[0], np.cumsum(b * np.arange(b.size, dtype=np.int64))])
        k = np.arange(b.size - block + 1, dtype=np.int64)
        sa = s[k + block] - s[k]
        sb = (k + block) * sa - (t[k + block] - t[k])
        weak = (sa & 0xFFFF) | ((sb & 0xFFFF) << 16)
        cand = np.flatnonzero(np.isin(weak, np.fromiter(table, np.int64)))
        strong = {}
        for c in cand.tolist():
            if c < pos:
                continue
            piece = new[c:c + block]
            hit = False
            for i in table[int(weak[c])]:
                sig = strong.get(i)
                if sig is None:
                    sig = strong[i] = hash64(old[i * block:(i + 1) * block])
                if sig == hash64(piece):
                    hit = True
                    break
            if hit:
                if c > pos:
                    literal += c - pos
                    runs += 1
                matches += 1
                pos = c + block
    if pos < len(new):
        literal += len(new) - pos
        runs += 1
    instructions = 4 * matches + 4 * runs + literal
    return {"signature": signature, "literal": literal, "instructions": instructions,
            "total": signature + instructions + 16}


# -- sweeps ----------------------------------------------------------------------

def _cell_salt(cell, seed) -> int:
    return hash64(repr((cell, seed)).encode())


def run_cell(size, budget, bursts, levels, branch, window, seed,
             baseline=False, timings=False) -> dict:
    """One loopback pull session: the client holds an edited copy of the server's string."""
    cell = (size, budget, bursts, levels, branch, window)
    server = random_bytes(size, seed)
    client, _ = generate_edits(server, budget, bursts, seed + 1)
    cfg = SessionConfig(tree=TreeParams(levels, branch, window), salt=_cell_salt(cell, seed))
    row = dict(zip(COLUMNS[:7], cell + (seed,)))
    try:
        (final, rep), _ = sync_loopback(client, server, cfg)
    except RcdsError as exc:
        row.update({c: "" for c in COLUMNS[7:]})
        row.update(converged=0, fallback=1, failure=f"{type(exc).__name__}: {exc}")
        return row
    row.update(
        converged=int(final == server),
        fallback=int(rep.fallback_used),
        total_bytes=rep.total_bytes,
        literal_bytes=rep.literal_bytes,
        setrecon_bytes=rep.phase_bytes("estimate") + rep.phase_bytes("iblt"),
        request_bytes=rep.phase_bytes("requests"),
        composition_bytes=rep.phase_bytes("composition"),
        overhead_bytes=sum(rep.phase_bytes(p) for p in ("hello", "verify", "fallback")),
        rounds=rep.rounds,
        partitions_remote=rep.partitions_remote,
        unmatched=rep.partitions_unmatched,
        unmatched_pct=round(100 * rep.unmatched_fraction, 4),
        max_duplication=rep.max_duplication,
        backtrack_visits=rep.backtrack_visits,
        baseline_bytes=fixed_block_cost(client, server)["total"] if baseline else "",
        failure="",
    )
    if timings:
        for col in TIME_COLUMNS:
            row[col] = round(rep.times.get(col[2:], 0.0), 6)
    return row


def grid_cells(grid: dict):
    keys = ("size", "budget", "bursts", "levels", "branch", "window")
    values = [list(grid[k]) if isinstance(grid[k], (list, tuple)) else [grid[k]] for k in keys]
    return list(itertools.product(*values))


def run_sweep(grid: dict, seeds, baseline=False, timings=False):
    """Rows for every cell of ``grid`` (keys as in the CSV) and every seed."""
    seeds = range(seeds) if isinstance(seeds, int) else seeds
    return [run_cell(*cell, seed, baseline=baseline, timings=timings)
            for cell in grid_cells(grid) for seed in seeds]


def write_csv(rows, out=None, timings=False) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=COLUMNS + (TIME_COLUMNS if timings else []),
                            lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    text = buf.getvalue()
    if out is not None:
        out.write(text)
    return text


def summarize(rows, metric: str):
    """Per-cell median, mean and 95% CI half-width (``None`` below 30 seeds)."""
    cells = {}
    for row in rows:
        if row[metric] == "":
            continue
        key = tuple(row[c] for c in COLUMNS[:6])
        cells.setdefault(key, []).append(float(row[metric]))
    out = {}
    for key, vals in cells.items():
        ci = 1.96 * statistics.stdev(vals) / math.sqrt(len(vals)) if len(vals) >= 30 else None
        out[key] = {"n": len(vals), "median": statistics.median(vals),
                    "mean": statistics.fmean(vals), "ci95": ci}
    return out
