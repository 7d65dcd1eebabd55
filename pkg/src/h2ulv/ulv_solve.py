"""Forward/backward substitution through the ULV factors.

Two variants share the factors: a naive block-sequential sweep (the
reference) and a dependency-free variant that replaces the sequential
off-diagonal updates of each level with four parallel phases.  The
parallel form is valid because the chained off-diagonal products that
a second round of updates would introduce are exactly the cross terms
the factorization basis annihilates.
"""

from dataclasses import dataclass, field

import numpy as np

from . import dense_core


@dataclass
class BlockVector:
    """Per-level redundant segments plus the root segment."""

    yr: dict = field(default_factory=dict)  # (level, box) -> (red, w) array
    root: np.ndarray = None
    width: int = 1
    vector: bool = True  # original rhs was 1-D


def _leaf_segments(factors, bm):
    tree = factors.h2.tree
    return {i: bm[box.begin:box.end] for i, box in enumerate(tree.leaves)}


def _transform_in(factors, l, segs):
    br, bs = {}, {}
    for i, seg in segs.items():
        b = factors.h2.bases[(l, i)]
        w = b.q_full.T @ seg
        r = b.n - b.rank
        br[i] = w[:r]
        bs[i] = w[r:]
    return br, bs


def _near_sets(lists, l, nb):
    below = [[] for _ in range(nb)]  # j < i with (i, j) near (row neighbors)
    above = [[] for _ in range(nb)]  # j > i with (j, i) near
    for (i, j) in lists.near[l]:
        if i > j:
            below[i].append(j)
            above[j].append(i)
    for lst in below:
        lst.sort()
    for lst in above:
        lst.sort()
    return below, above


def forward_naive(factors, b):
    return _forward(factors, b, parallel=False)


def forward_parallel(factors, b):
    return _forward(factors, b, parallel=True)


def _forward(factors, b, parallel):
    bm = np.asarray(b, dtype=np.float64)
    vector = bm.ndim == 1
    bm = bm.reshape(factors.h2.count, -1).copy()
    out = BlockVector(width=bm.shape[1], vector=vector)
    depth = factors.depth
    lists = factors.h2.lists

    if depth == 0:
        out.root = dense_core.tri_solve(factors.root, bm)
        return out

    segs = _leaf_segments(factors, bm)
    for l in range(depth, 0, -1):
        lvl = factors.levels[l]
        nb = 2 ** l
        br, bs = _transform_in(factors, l, segs)
        below, above = _near_sets(lists, l, nb)
        ls_targets = [[] for _ in range(nb)]  # j with (j, i) in ls, per i
        for (a, bkey) in lvl.ls:
            ls_targets[bkey].append(a)
        for lst in ls_targets:
            lst.sort()

        if not parallel:
            for i in range(nb):
                y = dense_core.tri_solve(lvl.lr_diag[i], br[i])
                br[i] = y
                for j in above[i]:
                    br[j] = br[j] - lvl.lr_off[(j, i)] @ y
                for j in ls_targets[i]:
                    bs[j] = bs[j] - lvl.ls[(j, i)] @ y
        else:
            z = {i: dense_core.tri_solve(lvl.lr_diag[i], br[i]) for i in range(nb)}
            y = {}
            for i in range(nb):
                u = np.zeros_like(br[i])
                for j in below[i]:
                    u += lvl.lr_off[(i, j)] @ z[j]
                y[i] = dense_core.tri_solve(lvl.lr_diag[i], br[i] - u)
            for i in range(nb):
                for j in ls_targets[i]:
                    bs[j] = bs[j] - lvl.ls[(j, i)] @ y[i]
            br = y

        for i in range(nb):
            out.yr[(l, i)] = br[i]
        segs = {p: np.vstack([bs[2 * p], bs[2 * p + 1]]) for p in range(nb // 2)}

    out.root = dense_core.tri_solve(factors.root, segs[0])
    return out


def backward_naive(factors, y):
    return _backward(factors, y, parallel=False)


def backward_parallel(factors, y):
    return _backward(factors, y, parallel=True)


def _backward(factors, y, parallel):
    depth = factors.depth
    lists = factors.h2.lists
    x_root = dense_core.tri_solve(factors.root, y.root, transposed=True)
    if depth == 0:
        return x_root[:, 0] if y.vector else x_root

    parent = x_root  # concatenated skeleton segments of the level below
    for l in range(1, depth + 1):
        lvl = factors.levels[l]
        nb = 2 ** l
        xs = {}
        pos = 0
        for i in range(nb):
            k = lvl.dims[i][1]
            xs[i] = parent[pos:pos + k]
            pos += k
        yr = {i: y.yr[(l, i)].copy() for i in range(nb)}
        below, above = _near_sets(lists, l, nb)
        ls_sources = [[] for _ in range(nb)]  # j with L(s)_ji acting on box i
        for (a, bkey) in lvl.ls:
            ls_sources[bkey].append(a)
        for lst in ls_sources:
            lst.sort()

        for i in range(nb):
            for j in ls_sources[i]:
                yr[i] = yr[i] - lvl.ls[(j, i)].T @ xs[j]

        xr = {}
        if not parallel:
            for i in reversed(range(nb)):
                acc = yr[i]
                for j in above[i]:
                    acc = acc - lvl.lr_off[(j, i)].T @ xr[j]
                xr[i] = dense_core.tri_solve(lvl.lr_diag[i], acc, transposed=True)
        else:
            z = {i: dense_core.tri_solve(lvl.lr_diag[i], yr[i], transposed=True)
                 for i in range(nb)}
            for i in range(nb):
                u = np.zeros_like(yr[i])
                for j in above[i]:
                    u += lvl.lr_off[(j, i)].T @ z[j]
                xr[i] = dense_core.tri_solve(lvl.lr_diag[i], yr[i] - u,
                                             transposed=True)

        full = {}
        for i in range(nb):
            b = factors.h2.bases[(l, i)]
            full[i] = b.q_red @ xr[i] + b.q_skel @ xs[i]
        if l == depth:
            tree = factors.h2.tree
            n = factors.h2.count
            w = y.root.shape[1]
            x = np.zeros((n, w))
            for i, box in enumerate(tree.leaves):
                x[box.begin:box.end] = full[i]
            return x[:, 0] if y.vector else x
        # each full[i] is the concatenation of box i's children's skeleton
        # coefficients; stacking in box order gives the next level's input
        parent = np.vstack([full[i] for i in range(nb)])
    raise AssertionError("unreachable")


def solve(factors, b, mode="parallel"):
    """Solve A x = b; b given in the original input ordering."""
    if mode not in ("naive", "parallel"):
        raise ValueError(f"unknown mode '{mode}'")
    b = np.asarray(b, dtype=np.float64)
    vector = b.ndim == 1
    bm = b.reshape(factors.h2.count, -1)
    perm = factors.h2.cloud.perm
    bt = bm[perm]
    fwd = forward_parallel if mode == "parallel" else forward_naive
    bwd = backward_parallel if mode == "parallel" else backward_naive
    y = fwd(factors, bt)
    xt = bwd(factors, y)
    xt = xt.reshape(factors.h2.count, -1)
    x = np.zeros_like(xt)
    x[perm] = xt
    return x[:, 0] if vector else x
