"""Tests for the distributed-execution simulator (no real networking)."""

import numpy as np
import pytest

from h2ulv.comm_sim import (
    assign,
    fixed_ranks,
    ranks_of,
    replicated_work,
    simulate_factor,
    simulate_solve,
)
from h2ulv.geometry import build_interaction_lists, build_tree, gen_sphere_surface
from h2ulv.h2_build import BuildConfig, construct
from h2ulv.kernels import KernelSpec
from h2ulv.ulv_factor import factorize


def _structure(n, leaf, eta, seed=0):
    cloud = gen_sphere_surface(n, seed=seed)
    tree = build_tree(cloud, leaf)
    lists = build_interaction_lists(tree, eta)
    return cloud, tree, lists


class TestAssignment:
    def test_rejects_non_power_of_two(self):
        _, tree, _ = _structure(512, 64, 1.0)
        with pytest.raises(ValueError):
            assign(tree, 3)

    def test_rejects_p_above_leaf_count(self):
        _, tree, _ = _structure(512, 64, 1.0)
        leaves = 2 ** tree.depth
        with pytest.raises(ValueError):
            assign(tree, 2 * leaves)

    def test_p1_single_owner_everywhere(self):
        _, tree, _ = _structure(512, 64, 1.0)
        a = assign(tree, 1)
        for l in range(tree.depth + 1):
            for i in range(2 ** l):
                assert a.group(l, i) == (0, 1)
                assert a.owner(l, i) == 0

    def test_p2_eight_leaves_split(self):
        _, tree, _ = _structure(512, 64, 1.0)
        assert tree.depth == 3  # 8 leaves
        a = assign(tree, 2)
        owners = [a.owner(3, i) for i in range(8)]
        assert owners == [0, 0, 0, 0, 1, 1, 1, 1]

    def test_leaf_ranges_contiguous(self):
        _, tree, _ = _structure(2048, 64, 1.0)
        leaves = 2 ** tree.depth
        for p in (2, 4, 8):
            a = assign(tree, p)
            span = leaves // p
            for i in range(leaves):
                assert a.owner(tree.depth, i) == i // span

    def test_replication_groups(self):
        # at level log2(p) each box sits on a singleton group; the root
        # is replicated on every process
        _, tree, _ = _structure(2048, 64, 1.0)
        p = 8
        a = assign(tree, p)
        lp = a.merge_levels
        for i in range(2 ** lp):
            assert a.group(lp, i) == (i, i + 1)
        assert a.group(0, 0) == (0, p)

    def test_parent_group_is_union_of_children(self):
        _, tree, _ = _structure(2048, 64, 1.0)
        a = assign(tree, 8)
        for l in range(1, tree.depth + 1):
            for i in range(0, 2 ** l, 2):
                g0 = a.group(l, i)
                g1 = a.group(l, i + 1)
                gp = a.group(l - 1, i // 2)
                assert gp == (min(g0[0], g1[0]), max(g0[1], g1[1]))


class TestFactorTrace:
    def test_p1_empty_trace(self):
        _, tree, lists = _structure(1024, 64, 1.0)
        a = assign(tree, 1)
        ranks = fixed_ranks(tree, lists, 16)
        assert simulate_factor(tree, lists, ranks, a).events == []

    def test_no_events_below_merge_levels(self):
        _, tree, lists = _structure(2048, 64, 1.0)
        a = assign(tree, 4)
        ranks = fixed_ranks(tree, lists, 16)
        trace = simulate_factor(tree, lists, ranks, a)
        assert all(e.level < a.merge_levels for e in trace.events)

    def test_events_are_allreduce_with_positive_bytes(self):
        _, tree, lists = _structure(2048, 64, 1.0)
        a = assign(tree, 8)
        ranks = fixed_ranks(tree, lists, 16)
        trace = simulate_factor(tree, lists, ranks, a)
        assert trace.events
        for e in trace.events:
            assert e.phase == "factor"
            assert e.kind == "allreduce"
            assert e.bytes > 0
            assert e.participants[1] - e.participants[0] >= 2

    def test_event_count_independent_of_n(self):
        counts = []
        for n in (2 ** 13, 2 ** 15):
            _, tree, lists = _structure(n, 64, 1.0)
            a = assign(tree, 8)
            ranks = fixed_ranks(tree, lists, 30)
            counts.append(simulate_factor(tree, lists, ranks, a).count())
        assert counts[0] == counts[1]

    def test_count_matches_straddling_near_pairs(self):
        _, tree, lists = _structure(2048, 64, 1.0)
        a = assign(tree, 8)
        ranks = fixed_ranks(tree, lists, 16)
        want = 0
        for pl in range(a.merge_levels):
            if pl > tree.depth - 1:
                continue
            for (i, j) in lists.near[pl]:
                if i < j:
                    continue
                g0 = a.group(pl, i)
                g1 = a.group(pl, j)
                g = (min(g0[0], g1[0]), max(g0[1], g1[1]))
                if g[1] - g[0] >= 2:
                    want += 1
        got = simulate_factor(tree, lists, ranks, a).count()
        assert got == want

    def test_determinism(self):
        _, tree, lists = _structure(2048, 64, 1.0)
        a = assign(tree, 8)
        ranks = fixed_ranks(tree, lists, 16)
        t1 = simulate_factor(tree, lists, ranks, a)
        t2 = simulate_factor(tree, lists, ranks, a)
        assert [(e.phase, e.level, e.kind, e.participants, e.bytes)
                for e in t1.events] == \
               [(e.phase, e.level, e.kind, e.participants, e.bytes)
                for e in t2.events]


class TestSolveTrace:
    def test_p1_empty_trace(self):
        _, tree, lists = _structure(1024, 64, 1.0)
        a = assign(tree, 1)
        ranks = fixed_ranks(tree, lists, 16)
        assert simulate_solve(tree, lists, ranks, a).events == []

    def test_hss_has_no_neighbor_events(self):
        _, tree, lists = _structure(2048, 64, 0.0)
        a = assign(tree, 8)
        ranks = fixed_ranks(tree, lists, 16)
        trace = simulate_solve(tree, lists, ranks, a)
        assert trace.count(kind="neighbor_reduce") == 0
        assert trace.count(kind="neighbor_bcast") == 0
        assert trace.count(kind="allreduce") > 0

    def test_backward_mirrors_forward(self):
        _, tree, lists = _structure(2048, 64, 1.0)
        a = assign(tree, 8)
        ranks = fixed_ranks(tree, lists, 16)
        trace = simulate_solve(tree, lists, ranks, a)
        fwd = trace.count(phase="forward")
        bwd = trace.count(phase="backward")
        assert fwd == bwd > 0
        assert trace.total_bytes("forward") == trace.total_bytes("backward")

    def test_per_process_bytes_shape_and_total(self):
        _, tree, lists = _structure(2048, 64, 1.0)
        a = assign(tree, 8)
        ranks = fixed_ranks(tree, lists, 16)
        trace = simulate_solve(tree, lists, ranks, a)
        per = trace.per_process_bytes(8)
        assert per.shape == (8,)
        assert per.sum() > 0

    def test_ranks_from_built_matrix_accepted(self):
        cloud, tree, lists = _structure(1024, 64, 1.0)
        k = KernelSpec(family="laplace")
        h2 = construct(k, tree, lists, BuildConfig(eta=1.0, leaf_max=64, rank=16), cloud)
        a = assign(tree, 4)
        trace = simulate_solve(tree, lists, ranks_of(h2), a)
        assert all(e.bytes > 0 for e in trace.events)


class TestReplicatedWork:
    def _report(self, n=1024, leaf=64, eta=1.0, rank=16):
        cloud, tree, lists = _structure(n, leaf, eta)
        k = KernelSpec(family="laplace")
        h2 = construct(k, tree, lists, BuildConfig(eta=eta, leaf_max=leaf, rank=rank), cloud)
        factors = factorize(h2)
        return tree, factors.flops

    def test_p1_zero_redundant(self):
        tree, report = self._report()
        out = replicated_work(assign(tree, 1), report)
        assert out["redundant_flops"] == 0
        assert out["redundant_share"] == 0.0

    def test_share_increases_with_p(self):
        tree, report = self._report(n=2048)
        shares = [replicated_work(assign(tree, p), report)["redundant_share"]
                  for p in (1, 2, 4, 8)]
        for lo, hi in zip(shares, shares[1:]):
            assert hi > lo

    def test_replication_factor_is_group_size(self):
        tree, report = self._report(n=2048)
        p = 4
        out = replicated_work(assign(tree, p), report)
        for l, ent in out["per_level"].items():
            want = p >> l if l < 2 else 1
            assert ent["replication"] == want
            assert ent["redundant"] == ent["true"] * (want - 1)


class TestFixedRanks:
    def test_leaf_ranks_clamped_to_box_size(self):
        _, tree, lists = _structure(512, 64, 1.0)
        ranks = fixed_ranks(tree, lists, 100)
        for i in range(2 ** tree.depth):
            assert ranks[(tree.depth, i)] == tree.box(tree.depth, i).size

    def test_upper_ranks_use_child_skeletons(self):
        _, tree, lists = _structure(512, 64, 1.0)
        ranks = fixed_ranks(tree, lists, 16)
        for l in range(tree.depth - 1, 0, -1):
            for i in range(2 ** l):
                eff = ranks[(l + 1, 2 * i)] + ranks[(l + 1, 2 * i + 1)]
                assert ranks[(l, i)] == min(16, eff)
