import csv
import io
import math
import random
import statistics
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rcds.bench import (COLUMNS, TIME_COLUMNS, fixed_block_cost, failure_bound, generate_edits,
                        partition_probability, partition_probability_mc, random_bytes, run_cell,
                        run_sweep, summarize, write_csv)


def edit_distance(a: bytes, b: bytes) -> int:
    """Levenshtein table, one row at a time; the in-row insertion chain is a running minimum."""
    x = np.frombuffer(a, np.uint8)
    y = np.frombuffer(b, np.uint8)
    cols = np.arange(len(y) + 1)
    prev = cols.copy()
    for i in range(1, len(x) + 1):
        tmp = np.empty_like(prev)
        tmp[0] = i
        tmp[1:] = np.minimum(prev[1:] + 1, prev[:-1] + (y != x[i - 1]))
        prev = np.minimum.accumulate(tmp - cols) + cols
    return int(prev[-1])


class TestEditDistanceOracle:
    @pytest.mark.parametrize("a,b,d", [(b"", b"", 0), (b"abc", b"", 3), (b"kitten", b"sitting", 3),
                                       (b"flaw", b"lawn", 2), (b"abc", b"abc", 0)])
    def test_known(self, a, b, d):
        assert edit_distance(a, b) == d

    @settings(max_examples=200, deadline=None)
    @given(st.binary(max_size=12), st.binary(max_size=12))
    def test_against_recursion(self, a, b):
        from functools import lru_cache

        @lru_cache(None)
        def rec(i, j):
            if i == 0 or j == 0:
                return i + j
            return min(rec(i - 1, j) + 1, rec(i, j - 1) + 1,
                       rec(i - 1, j - 1) + (a[i - 1] != b[j - 1]))
        assert edit_distance(a, b) == rec(len(a), len(b))


class TestGenerateEdits:
    def test_budget_zero_is_one(self):
        data = bytes(range(200))
        for seed in range(20):
            out, bursts = generate_edits(data, 0, 3, seed)
            assert len(bursts) == 1 and bursts[0].length == 1
            assert edit_distance(data, out) == 1

    def test_single_insert_distance_one(self):
        data = b"a" * 50 + b"b" * 50
        for seed in range(40):
            out, bursts = generate_edits(data, 1, 1, seed)
            if bursts[0].kind == "insert":
                assert len(out) == 101 and edit_distance(data, out) == 1
                return
        pytest.fail("no insert drawn in 40 seeds")

    def test_deterministic(self):
        data = random_bytes(5000, 1)
        assert generate_edits(data, 300, 7, 42) == generate_edits(data, 300, 7, 42)
        assert generate_edits(data, 300, 7, 42)[0] != generate_edits(data, 300, 7, 43)[0]

    def test_edit_distance_within_budget(self):
        rng = random.Random(5)
        for case in range(100):
            data = rng.randbytes(rng.randrange(0, 4097))
            budget = rng.randint(1, 400)
            bursts = rng.randint(1, 20)
            out, log = generate_edits(data, budget, bursts, case)
            assert sum(b.length for b in log) <= budget
            assert edit_distance(data, out) <= budget

    def test_length_range(self):
        data = random_bytes(10**5, 0)
        lengths = []
        for seed in range(200):
            _, log = generate_edits(data, 1000, 10, seed)
            lengths += [b.length for b in log]
        assert min(lengths) >= 1 and max(lengths) <= 200
        assert max(lengths) > 150  # the upper part of the range is reachable

    def test_delete_truncated_at_end(self):
        out, log = generate_edits(b"xy", 50, 1, 0)
        total = sum(b.length for b in log)
        assert total <= 50 and (log[0].kind == "insert" or len(out) == 2 - total)

    def test_invalid_bursts(self):
        with pytest.raises(ValueError):
            generate_edits(b"abc", 10, 0, 0)


class TestPartitionProbability:
    def test_constant_hash(self):
        for h in (1, 2, 10):
            assert partition_probability(1, h) == 1.0

    def test_exact_value(self):
        exact = sum(Fraction(1, 16) * Fraction(j, 16) ** 4 for j in range(17))
        assert exact == Fraction(243848, 1048576)
        assert partition_probability(16, 2) == pytest.approx(float(exact), abs=1e-15)
        assert abs(partition_probability(16, 2) - 0.232552) < 1e-5

    @pytest.mark.parametrize("s", [2, 16, 1024])
    def test_decreasing_in_h(self, s):
        vals = [partition_probability(s, h) for h in range(1, 21)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_monte_carlo_small(self):
        p, se = partition_probability_mc(16, 2, 200_000, seed=3)
        assert abs(p - partition_probability(16, 2)) < 3 * se

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            partition_probability(0, 2)


class TestFailureBound:
    @pytest.mark.parametrize("b", [32, 64])
    def test_single_partition(self, b):
        with mpmath.workdps(60):
            want = -mpmath.expm1(-mpmath.mpf(4) / (2 * (mpmath.mpf(2) ** b)))
        assert failure_bound(1, 3, b) == pytest.approx(float(want), rel=1e-12)

    def test_small_x_expansion(self):
        n = 10**6
        approx = (n + 1) ** 2 / (2 * 2.0**64)
        assert failure_bound(n, 2, 64) == pytest.approx(approx, rel=0.01)

    def test_monotone_in_n(self):
        for b in (32, 64):
            vals = [failure_bound(n, 2, b) for n in (1, 10, 10**3, 10**5, 10**7)]
            assert all(x <= y for x, y in zip(vals, vals[1:]))

    def test_saturates(self):
        assert failure_bound(10**6, 1, 32) == pytest.approx(1.0)

    def test_rejects_bad_bits(self):
        with pytest.raises(ValueError):
            failure_bound(10, 2, 16)


class TestBaseline:
    def test_identical(self):
        data = random_bytes(64 * 100, 2)
        cost = fixed_block_cost(data, data)
        assert cost["literal"] == 0 and cost["signature"] == 1200

    def test_unrelated(self):
        cost = fixed_block_cost(random_bytes(6400, 1), random_bytes(6400, 2))
        assert cost["literal"] == 6400

    def test_shifted(self):
        data = random_bytes(64 * 50, 3)
        cost = fixed_block_cost(data, b"zz" + data)
        assert cost["literal"] == 2

    def test_linear_growth(self):
        small = fixed_block_cost(random_bytes(10**4, 0), random_bytes(10**4, 0))["total"]
        big = fixed_block_cost(random_bytes(10**5, 0), random_bytes(10**5, 0))["total"]
        assert 9 <= big / small <= 11


GRID = dict(size=20_000, budget=50, bursts=5, levels=3, branch=8, window=16)


class TestSweep:
    def test_one_cell(self):
        text = write_csv(run_sweep(GRID, 1))
        lines = text.splitlines()
        assert len(lines) == 2 and lines[0] == ",".join(COLUMNS)
        row = next(csv.DictReader(io.StringIO(text)))
        assert row["converged"] == "1" and row["failure"] == ""

    def test_rerun_identical(self):
        assert write_csv(run_sweep(GRID, 3)) == write_csv(run_sweep(GRID, 3))

    def test_timing_columns(self):
        rows = run_sweep(GRID, 1, timings=True)
        header = write_csv(rows, timings=True).splitlines()[0].split(",")
        assert header == COLUMNS + TIME_COLUMNS
        assert rows[0]["t_total"] >= rows[0]["t_tree"] >= 0

    def test_grid_product(self):
        rows = run_sweep(dict(GRID, levels=[2, 3], budget=[10, 20]), [7])
        assert [(r["budget"], r["levels"]) for r in rows] == [(10, 2), (10, 3), (20, 2), (20, 3)]

    def test_tiny_input(self):
        row = run_cell(500, 10, 1, 2, 8, 16, 0)
        assert row["converged"] == 1

    def test_failed_cell_recorded(self, monkeypatch):
        from rcds import bench
        from rcds.errors import SyncFailed

        def boom(*a, **kw):
            raise SyncFailed("engineered")

        monkeypatch.setattr(bench, "sync_loopback", boom)
        rows = run_sweep(dict(GRID, levels=[2, 3]), 1)
        assert len(rows) == 2
        assert all(r["converged"] == 0 and r["fallback"] == 1 for r in rows)
        assert rows[0]["failure"] == "SyncFailed: engineered"
        assert write_csv(rows).count("\n") == 3

    def test_doubling_sublinear(self):
        small = run_sweep(dict(GRID, size=100_000, budget=100, bursts=10, levels=4), 7)
        big = run_sweep(dict(GRID, size=200_000, budget=100, bursts=10, levels=4), 7)
        ratio = (statistics.median(r["total_bytes"] for r in big)
                 / statistics.median(r["total_bytes"] for r in small))
        assert ratio < 2

    def test_bigger_tree_trades_literals_for_setrecon(self):
        seeds = 10
        by_level = {L: run_sweep(dict(GRID, size=100_000, budget=100, bursts=10, levels=L), seeds)
                    for L in (2, 3, 4)}
        for lo, hi in ((2, 3), (3, 4)):
            ok = sum(b["literal_bytes"] <= a["literal_bytes"]
                     for a, b in zip(by_level[lo], by_level[hi]))
            assert ok >= 0.8 * seeds
            assert (statistics.median(r["setrecon_bytes"] for r in by_level[hi])
                    > statistics.median(r["setrecon_bytes"] for r in by_level[lo]))


class TestSummarize:
    def test_ci_only_with_30_seeds(self):
        rows = [dict(zip(COLUMNS[:6], (1, 2, 3, 4, 5, 6)), total_bytes=v) for v in range(30)]
        stats = summarize(rows, "total_bytes")[(1, 2, 3, 4, 5, 6)]
        assert stats["n"] == 30 and stats["median"] == 14.5
        assert stats["ci95"] == pytest.approx(1.96 * statistics.stdev(range(30)) / math.sqrt(30))
        assert summarize(rows[:29], "total_bytes")[(1, 2, 3, 4, 5, 6)]["ci95"] is None

    def test_blank_values_skipped(self):
        rows = [dict(zip(COLUMNS[:6], (1,) * 6), total_bytes=""),
                dict(zip(COLUMNS[:6], (1,) * 6), total_bytes=5)]
        assert summarize(rows, "total_bytes")[(1,) * 6]["n"] == 1
