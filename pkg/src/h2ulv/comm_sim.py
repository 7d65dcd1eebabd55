"""Simulation of the distributed execution plan (no real networking).

Processes own contiguous leaf ranges (1-D column distribution); above
level log2(p) every box is replicated across its subtree's process
group.  Factorization communicates only when merging across group
boundaries (one AllReduce per parent near block); substitution adds
neighbor reduce/broadcast events at the distributed levels.  Traces are
pure functions of the block structure — no numerical data moves.
"""

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class ProcAssignment:
    p: int
    depth: int

    @property
    def merge_levels(self):
        return int(math.log2(self.p))

    def group(self, level, box):
        """Process set owning (replicating) a box, as a range tuple."""
        lp = self.merge_levels
        if level >= lp:
            r = box >> (level - lp)
            return (r, r + 1)
        span = self.p >> level
        return (box * span, (box + 1) * span)

    def owner(self, level, box):
        g = self.group(level, box)
        return g[0]


@dataclass
class CommEvent:
    phase: str
    level: int
    kind: str
    participants: tuple  # process range [lo, hi)
    bytes: int


@dataclass
class CommTrace:
    events: list = field(default_factory=list)

    def count(self, phase=None, kind=None):
        return sum(1 for e in self.events
                   if (phase is None or e.phase == phase)
                   and (kind is None or e.kind == kind))

    def total_bytes(self, phase=None):
        return sum(e.bytes for e in self.events
                   if phase is None or e.phase == phase)

    def per_process_bytes(self, p):
        out = np.zeros(p, dtype=np.int64)
        for e in self.events:
            lo, hi = e.participants
            out[lo:hi] += e.bytes
        return out


def assign(tree, p):
    if p < 1 or p & (p - 1):
        raise ValueError("process count must be a power of 2")
    if p > 2 ** tree.depth:
        raise ValueError(f"p = {p} exceeds the leaf count {2 ** tree.depth}")
    return ProcAssignment(p=p, depth=tree.depth)


def _union(g1, g2):
    return (min(g1[0], g2[0]), max(g1[1], g2[1]))


def _dims(ranks, level, box, tree, leaf_sizes=None):
    """(redundant, skeleton) sizes of a box from the rank map."""
    k = ranks[(level, box)]
    if level == tree.depth:
        n = tree.box(level, box).size
    else:
        n = ranks[(level + 1, 2 * box)] + ranks[(level + 1, 2 * box + 1)]
    return n - k, k


def simulate_factor(tree, lists, ranks, assignment):
    """AllReduce events for every parent-level merge that crosses a
    communicator boundary; levels deeper than log2(p) are silent."""
    trace = CommTrace()
    lp = assignment.merge_levels
    for pl in range(min(tree.depth - 1, lp - 1), -1, -1):
        for (i, j) in sorted(lists.near[pl]):
            if i < j:
                continue
            g = _union(assignment.group(pl, i), assignment.group(pl, j))
            if g[1] - g[0] < 2:
                continue
            di = ranks[(pl + 1, 2 * i)] + ranks[(pl + 1, 2 * i + 1)]
            dj = ranks[(pl + 1, 2 * j)] + ranks[(pl + 1, 2 * j + 1)]
            trace.events.append(CommEvent("factor", pl, "allreduce", g, 8 * di * dj))
    return trace


def simulate_solve(tree, lists, ranks, assignment):
    """Neighbor reduce/broadcast at distributed levels plus vector-sized
    merge AllReduces at the replicated levels; backward mirrors forward."""
    trace = CommTrace()
    lp = assignment.merge_levels
    for phase in ("forward", "backward"):
        for l in range(tree.depth, 0, -1):
            if l > lp:
                # distributed level: each box has a single owner
                seen_bcast = set()
                for (i, j) in sorted(lists.near[l]):
                    if i <= j:
                        continue
                    oi = assignment.owner(l, i)
                    oj = assignment.owner(l, j)
                    if oi == oj:
                        continue
                    red_i, k_i = _dims(ranks, l, i, tree)
                    red_j, k_j = _dims(ranks, l, j, tree)
                    pair = (min(oi, oj), max(oi, oj) + 1)
                    kind = "neighbor_reduce" if phase == "forward" else "neighbor_bcast"
                    trace.events.append(CommEvent(phase, l, kind, pair, 8 * k_j))
                    for (src, dst_owner, red) in ((i, oj, red_i), (j, oi, red_j)):
                        if (src, dst_owner) not in seen_bcast:
                            seen_bcast.add((src, dst_owner))
                            kind2 = "neighbor_bcast" if phase == "forward" else "neighbor_reduce"
                            trace.events.append(
                                CommEvent(phase, l, kind2, pair, 8 * red))
            # merging level l into l-1 communicates when the parent group
            # spans more than one process
            pl = l - 1
            if pl < lp:
                for pbox in range(2 ** pl):
                    g = assignment.group(pl, pbox)
                    if g[1] - g[0] < 2:
                        continue
                    d = ranks[(l, 2 * pbox)] + ranks[(l, 2 * pbox + 1)]
                    trace.events.append(CommEvent(phase, pl, "allreduce", g, 8 * d))
    return trace


def replicated_work(assignment, flop_report):
    """Redundant (replicated) vs distinct flops per level."""
    lp = assignment.merge_levels
    per_level = {}
    distinct = 0
    redundant = 0
    for l, phases in flop_report["levels"].items():
        flops = sum(ent["true"] for ent in phases.values())
        group = assignment.p >> l if l < lp else 1
        per_level[l] = {"true": flops, "replication": group,
                        "redundant": flops * (group - 1)}
        distinct += flops
        redundant += flops * (group - 1)
    return {"distinct_flops": distinct, "redundant_flops": redundant,
            "per_level": per_level,
            "redundant_share": redundant / (distinct + redundant)
            if distinct + redundant else 0.0}


def fixed_ranks(tree, lists, rank):
    """Rank map for a fixed-rank structure (structure-only simulations)."""
    ranks = {}
    for l in range(tree.depth, 0, -1):
        for i in range(2 ** l):
            if l == tree.depth:
                n = tree.box(l, i).size
            else:
                n = ranks[(l + 1, 2 * i)] + ranks[(l + 1, 2 * i + 1)]
            ranks[(l, i)] = min(rank, n)
    return ranks


def ranks_of(h2):
    """Rank map extracted from a built hierarchical matrix."""
    return {(l, i): h2.bases[(l, i)].rank
            for (l, i) in h2.bases}
