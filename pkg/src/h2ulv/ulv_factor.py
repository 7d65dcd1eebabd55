"""ULV Cholesky factorization of the hierarchical representation.

Per level (fine to coarse): transform every block into the box bases
(redundant slab first, so sub-blocks read [RR RS; SR SS]), Cholesky the
diagonal RR, triangular-solve the SR couplings, apply the single Schur
update each diagonal SS receives, inject the far-pair couplings into
their SS slots, and merge child SS blocks 2x2 into the parent level.
Off-diagonal blocks are transformed against the combined right factor
[V_j | q_skel_j] with V_j = q_red_j L(r)_jj^-T, so their RR and SR slabs
arrive already triangular-solved and no per-block TRSM is needed.

By construction no off-diagonal block is ever updated after its initial
sparsified value is stored; the write-audit mode counts every block
mutation to demonstrate this structurally.
"""

from dataclasses import dataclass, field

import numpy as np

from . import dense_core
from .dense_core import BlockOp, plan_batches, run_plan, run_sequential
from .errors import StructureError


@dataclass
class ULVLevel:
    lr_diag: dict = field(default_factory=dict)  # i -> L(r)_ii
    lr_off: dict = field(default_factory=dict)  # (i, j), i > j -> L(r)_ij
    ls: dict = field(default_factory=dict)  # (a, b) near -> L(s)_ab (k_a x red_b)
    v: dict = field(default_factory=dict)  # i -> V_i (n_i x red_i)
    dims: dict = field(default_factory=dict)  # i -> (red, skel)


@dataclass
class ULVFactors:
    h2: object
    levels: dict = field(default_factory=dict)  # l -> ULVLevel
    root: np.ndarray = None
    merge_map: dict = field(default_factory=dict)
    flops: dict = field(default_factory=dict)
    audit: dict = field(default_factory=dict)
    retained: dict = None

    @property
    def depth(self):
        return self.h2.tree.depth


class _Slabs:
    """Block store with post-initialization write counters (audit)."""

    def __init__(self):
        self.data = {}
        self.post_init_writes = {}

    def init(self, key, val):
        if key in self.data:
            raise StructureError(f"block {key} initialized twice")
        self.data[key] = val
        self.post_init_writes[key] = 0

    def update(self, key, val):
        if key not in self.data:
            raise StructureError(f"update of uninitialized block {key}")
        self.data[key] = val
        self.post_init_writes[key] += 1


def sparsify_diag(basis, a_ii):
    """Q^T A_ii Q split into (rr, rs, sr, ss), redundant slab first."""
    q = basis.q_full
    h = q.T @ a_ii @ q
    r = basis.n - basis.rank
    return h[:r, :r], h[:r, r:], h[r:, :r], h[r:, r:]


def factor_diag(rr, sr, ss, basis, context=None):
    """Eliminate the redundant part of one diagonal block."""
    lr = dense_core.cholesky(rr, context=context)
    ls = dense_core.tri_solve(lr, sr, side="right", transposed=True)
    ss_updated = ss - ls @ ls.T
    v = dense_core.tri_solve(lr, basis.q_red, side="right", transposed=True)
    return lr, ls, ss_updated, v


def sparsify_off(basis_i, a_ij, v_j, basis_j, lr_ii=None):
    """Transform one stored near off-diagonal block (i > j).

    Returns (lr_ij, ls_ij, ss_ij, ls_ji): the right factor [V_j |
    q_skel_j] delivers the RR and SR slabs already solved against
    L(r)_jj; the RS slab is solved against L(r)_ii once to produce the
    mirror pair's L(s)_ji.
    """
    right = np.hstack([v_j, basis_j.q_skel])
    t = basis_i.q_full.T @ (a_ij @ right)
    ri = basis_i.n - basis_i.rank
    rj = basis_j.n - basis_j.rank
    lr_ij = t[:ri, :rj]
    ls_ij = t[ri:, :rj]
    ss_ij = t[ri:, rj:]
    ls_ji = None
    if lr_ii is not None:
        ls_ji = dense_core.tri_solve(lr_ii, t[:ri, rj:], side="left").T
    return lr_ij, ls_ij, ss_ij, ls_ji


def inject_couplings(h2, level, ss_sink):
    """Assign far-pair coupling matrices into their SS slots."""
    for (i, j) in h2.lists.far[level]:
        if i > j:
            ss_sink((i, j), h2.coupling(level, i, j))


def merge_level(ss_of, lists, level, ranks):
    """2x2-assemble child SS blocks into parent near blocks (level-1)."""
    merged = {}
    for (pi, pj) in lists.near[level - 1]:
        if pi < pj:
            continue
        rows = []
        for ci in (2 * pi, 2 * pi + 1):
            row = []
            for cj in (2 * pj, 2 * pj + 1):
                blk = ss_of(ci, cj)
                if blk is None:
                    raise StructureError(
                        f"missing child SS block ({level}, {ci}, {cj})")
                row.append(blk)
            rows.append(row)
        merged[(pi, pj)] = np.block(rows)
    return merged


def _record(flops, level, phase, plan):
    lvl = flops["levels"].setdefault(level, {})
    ent = lvl.setdefault(phase, {"true": 0, "padded": 0, "count": 0})
    ent["true"] += plan.true_flops
    ent["padded"] += plan.padded_flops
    ent["count"] += plan.op_count
    flops["total_true"] += plan.true_flops
    flops["total_padded"] += plan.padded_flops


def _run(ops, budget, batched, flops, level, phase):
    plan = plan_batches(ops, budget_blocks=budget)
    _record(flops, level, phase, plan)
    if batched:
        run_plan(plan)
    else:
        run_sequential(ops)


def factorize(h2, batched=True, retain=False):
    """Factor the whole hierarchy; returns ULVFactors with a flop report
    (true and padded counts per level/phase) and write-audit counters."""
    tree, lists = h2.tree, h2.lists
    depth = tree.depth
    factors = ULVFactors(h2=h2)
    factors.flops = {"levels": {}, "total_true": 0, "total_padded": 0}
    if retain:
        factors.retained = {}
    slabs = _Slabs()

    if depth == 0:
        a = h2.near_blocks[(0, 0, 0)]
        out = {}
        op = BlockOp(kind="cholesky", dims=(a.shape[0],), a=a, context=(0, 0),
                     sink=lambda r: out.__setitem__("root", r))
        _run([op], None, batched, factors.flops, 0, "root")
        factors.root = out["root"]
        factors.audit = _audit_report(slabs, depth)
        return factors

    current = {key[1:]: h2.near_blocks[key]
               for key in h2.near_blocks if key[0] == depth}

    for l in range(depth, 0, -1):
        lvl = ULVLevel()
        factors.levels[l] = lvl
        nb = 2 ** l
        bases = {i: h2.bases[(l, i)] for i in range(nb)}
        for i in range(nb):
            b = bases[i]
            lvl.dims[i] = (b.n - b.rank, b.rank)
        budget = nb  # number of diagonal blocks at this level

        # --- diagonal phase ---------------------------------------------
        m1 = {}
        ops = [BlockOp(kind="multiply", dims=(b.n, b.n, b.n),
                       a=current[(i, i)], b=b.q_full,
                       sink=(lambda i: lambda r: m1.__setitem__(i, r))(i))
               for i, b in bases.items()]
        _run(ops, budget, batched, factors.flops, l, "diag_mul1")
        h_diag = {}
        ops = [BlockOp(kind="multiply", dims=(b.n, b.n, b.n),
                       a=b.q_full, b=m1[i], transpose_a=True,
                       sink=(lambda i: lambda r: h_diag.__setitem__(i, r))(i))
               for i, b in bases.items()]
        _run(ops, budget, batched, factors.flops, l, "diag_mul2")
        m1.clear()

        for i, b in bases.items():
            r = b.n - b.rank
            h = h_diag[i]
            slabs.init(("rr", l, i, i), h[:r, :r])
            slabs.init(("rs", l, i, i), h[:r, r:])
            slabs.init(("sr", l, i, i), h[r:, :r])
            slabs.init(("ss", l, i, i), h[r:, r:])
            if retain:
                factors.retained[("rr", l, i, i)] = h[:r, :r].copy()
                factors.retained[("rs", l, i, i)] = h[:r, r:].copy()
                factors.retained[("sr", l, i, i)] = h[r:, :r].copy()
                factors.retained[("ss0", l, i, i)] = h[r:, r:].copy()
        h_diag.clear()

        ops = [BlockOp(kind="cholesky", dims=(lvl.dims[i][0],),
                       a=slabs.data[("rr", l, i, i)], context=(l, i),
                       sink=(lambda i: lambda r: lvl.lr_diag.__setitem__(i, r))(i))
               for i in range(nb)]
        _run(ops, budget, batched, factors.flops, l, "diag_chol")

        ops = []
        for i, b in bases.items():
            r, k = lvl.dims[i]
            ops.append(BlockOp(kind="tri_solve", dims=(r, k),
                               a=lvl.lr_diag[i], b=slabs.data[("sr", l, i, i)],
                               side="right", transposed=True,
                               sink=(lambda i: lambda x: lvl.ls.__setitem__((i, i), x))(i)))
            ops.append(BlockOp(kind="tri_solve", dims=(r, b.n),
                               a=lvl.lr_diag[i], b=b.q_red,
                               side="right", transposed=True,
                               sink=(lambda i: lambda x: lvl.v.__setitem__(i, x))(i)))
        _run(ops, budget, batched, factors.flops, l, "diag_trsm")

        ops = [BlockOp(kind="multiply", dims=(lvl.dims[i][1], lvl.dims[i][1], lvl.dims[i][0]),
                       a=lvl.ls[(i, i)], b=lvl.ls[(i, i)], transpose_b=True,
                       scale=-1.0, accumulate=slabs.data[("ss", l, i, i)],
                       sink=(lambda i: lambda r: slabs.update(("ss", l, i, i), r))(i))
               for i in range(nb)]
        _run(ops, budget, batched, factors.flops, l, "diag_schur")

        # --- off-diagonal phase -----------------------------------------
        off_pairs = sorted((i, j) for (i, j) in lists.near[l] if i > j)
        right = {j: np.hstack([lvl.v[j], bases[j].q_skel]) for j in
                 sorted({j for (_, j) in off_pairs})}
        m_off = {}
        ops = [BlockOp(kind="multiply", dims=(bases[i].n, bases[j].n, bases[j].n),
                       a=current[(i, j)], b=right[j],
                       sink=(lambda p: lambda r: m_off.__setitem__(p, r))((i, j)))
               for (i, j) in off_pairs]
        _run(ops, budget, batched, factors.flops, l, "off_mul1")
        t_off = {}
        ops = [BlockOp(kind="multiply", dims=(bases[i].n, bases[j].n, bases[i].n),
                       a=bases[i].q_full, b=m_off[(i, j)], transpose_a=True,
                       sink=(lambda p: lambda r: t_off.__setitem__(p, r))((i, j)))
               for (i, j) in off_pairs]
        _run(ops, budget, batched, factors.flops, l, "off_mul2")
        m_off.clear()

        rs_unsolved = {}
        for (i, j) in off_pairs:
            ri, ki = lvl.dims[i]
            rj, kj = lvl.dims[j]
            t = t_off[(i, j)]
            lvl.lr_off[(i, j)] = t[:ri, :rj]
            lvl.ls[(i, j)] = t[ri:, :rj]
            slabs.init(("ss", l, i, j), t[ri:, rj:])
            rs_unsolved[(i, j)] = t[:ri, rj:]
            slabs.init(("rr", l, i, j), None)  # audit slot; value lives in lr_off
            slabs.init(("sr", l, i, j), None)
            slabs.init(("rs", l, i, j), None)
            if retain:
                b_i, b_j = bases[i], bases[j]
                h = b_i.q_full.T @ current[(i, j)] @ b_j.q_full
                factors.retained[("rr", l, i, j)] = h[:ri, :rj]
                factors.retained[("rs", l, i, j)] = h[:ri, rj:]
                factors.retained[("sr", l, i, j)] = h[ri:, :rj]
                factors.retained[("ss0", l, i, j)] = h[ri:, rj:]
        t_off.clear()

        ops = [BlockOp(kind="tri_solve", dims=(lvl.dims[i][0], lvl.dims[j][1]),
                       a=lvl.lr_diag[i], b=rs_unsolved[(i, j)], side="left",
                       sink=(lambda p: lambda x: lvl.ls.__setitem__((p[1], p[0]), x.T))((i, j)))
               for (i, j) in off_pairs]
        _run(ops, budget, batched, factors.flops, l, "off_mirror")
        rs_unsolved.clear()

        inject_couplings(h2, l, lambda key, val: slabs.init(("ss", l) + key, val))

        # --- merge to the parent level ----------------------------------
        def ss_of(ci, cj, _l=l):
            key = ("ss", _l, ci, cj) if ci >= cj else ("ss", _l, cj, ci)
            blk = slabs.data.get(key)
            if blk is None:
                return None
            return blk if ci >= cj else blk.T

        ranks = {i: bases[i].rank for i in range(nb)}
        current = merge_level(ss_of, lists, l, ranks)
        factors.merge_map[l] = {
            (pi, pj): [(2 * pi + a, 2 * pj + b) for a in (0, 1) for b in (0, 1)]
            for (pi, pj) in lists.near[l - 1] if pi >= pj}
        if not retain:
            drop = [k for k in slabs.data if k[1] == l]
            for k in drop:
                del slabs.data[k]

    out = {}
    a00 = current[(0, 0)]
    op = BlockOp(kind="cholesky", dims=(a00.shape[0],), a=a00, context=(0, 0),
                 sink=lambda r: out.__setitem__("root", r))
    _run([op], None, batched, factors.flops, 0, "root")
    factors.root = out["root"]
    factors.audit = _audit_report(slabs, depth)
    return factors


def _audit_report(slabs, depth):
    """Summarize post-initialization write counts per block class."""
    offdiag_ss = 0
    rr_rs_sr = 0
    diag_ss = []
    for key, count in slabs.post_init_writes.items():
        kind, l, i, j = key
        if kind == "ss" and i == j:
            diag_ss.append(count)
        elif kind == "ss":
            offdiag_ss += count
        else:
            rr_rs_sr += count
    return {
        "offdiag_ss_post_init_writes": offdiag_ss,
        "rr_rs_sr_post_init_writes": rr_rs_sr,
        "diag_ss_update_counts": sorted(set(diag_ss)) if diag_ss else [],
        "diag_ss_blocks": len(diag_ss),
    }
