"""Hierarchical matrix construction and matrix-vector multiplication.

Bottom-up per level: every box gets a composite basis from the
interpolative decomposition of [far-field samples | pre-factored
close-field term G(B_i, S_C) A_cc^-1], so the basis also captures the
Schur-complement content the factorization would otherwise fill in.
Parent boxes operate on the concatenation of their children's skeleton
points; couplings are stored in the orthonormal skeleton frames
(S^_ij = F_i G(SK_i, SK_j) F_j^T), which makes the nested transforms of
the matvec and the factorization consistent with the stored blocks.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import dense_core, kernels
from .errors import SingularTriangularError, StructureError


@dataclass
class BuildConfig:
    eta: float = 1.0
    leaf_max: int = 64
    rank: int = None
    tol: float = None
    s_far: int = 0  # 0 disables sampling (use all available points)
    s_near: int = 0
    gs_sweeps: int = 2  # 0 = exact close-field inverse via Cholesky
    seed: int = 0

    def __post_init__(self):
        if (self.rank is None) == (self.tol is None):
            raise ValueError("exactly one of rank/tol must be set")
        if self.gs_sweeps < 0:
            raise ValueError("gs_sweeps must be >= 0")


@dataclass
class H2Matrix:
    tree: object
    lists: object
    kernel: object
    cloud: object
    config: object
    bases: dict = field(default_factory=dict)  # (l, i) -> BasisDecomposition
    skeletons: dict = field(default_factory=dict)  # (l, i) -> global point ids
    eff_points: dict = field(default_factory=dict)  # (l, i) -> global point ids
    near_blocks: dict = field(default_factory=dict)  # (l, i, j), i >= j
    couplings: dict = field(default_factory=dict)  # (l, i, j), i > j
    build_flops: dict = field(default_factory=dict)

    @property
    def count(self):
        return self.cloud.count

    def rank_of(self, l, i):
        return self.bases[(l, i)].rank

    def near_block(self, l, i, j):
        """Dense block for a near pair, synthesizing the transpose."""
        if i >= j:
            return self.near_blocks[(l, i, j)]
        return self.near_blocks[(l, j, i)].T

    def coupling(self, l, i, j):
        if i > j:
            return self.couplings[(l, i, j)]
        return self.couplings[(l, j, i)].T


def _box_rng(seed, level, box):
    return np.random.default_rng(np.random.SeedSequence((seed, level, box)))


def _stratified(pt_lists, budget, rng):
    """Round-robin draw across per-box point lists, `budget` total."""
    avail = sum(len(p) for p in pt_lists)
    if budget == 0 or budget >= avail:
        out = [p for p in pt_lists if len(p)]
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)
    pools = [p[rng.permutation(len(p))] for p in pt_lists if len(p)]
    taken, cursor = [], 0
    while len(taken) < budget:
        progressed = False
        for p in pools:
            if cursor < len(p):
                taken.append(p[cursor])
                progressed = True
                if len(taken) == budget:
                    break
        cursor += 1
        if not progressed:
            break
    return np.sort(np.asarray(taken, dtype=np.int64))


def sample_far(tree, lists, eff_points, level, box, s_far, seed):
    """Point ids drawn from the box's whole far region: every same-level
    box outside its near list (the nested basis must cover interactions
    separated at this level or at any ancestor level)."""
    near = {j for (i, j) in lists.near[level] if i == box}
    partners = [j for j in range(2 ** level) if j not in near]
    pools = [eff_points[(level, j)] for j in partners]
    return _stratified(pools, s_far, _box_rng(seed, level, box))


def sample_near(tree, lists, eff_points, level, box, s_near, seed):
    """Point ids from near (off-diagonal) boxes of (level, box)."""
    partners = sorted(j for (i, j) in lists.near[level] if i == box and j != box)
    pools = [eff_points[(level, j)] for j in partners]
    return _stratified(pools, s_near, _box_rng(seed, level, box) )


def gauss_seidel_solve(a, b, sweeps):
    """Approximate a^-1 b by forward Gauss-Seidel sweeps from X = 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = a.shape[0]
    diag = np.diag(a)
    if np.any(diag == 0.0):
        raise SingularTriangularError("zero diagonal in Gauss-Seidel")
    if sweeps < 1:
        raise ValueError("sweeps must be >= 1")
    x = np.zeros_like(b)
    lower = np.tril(a)  # includes the diagonal
    upper = a - lower
    for _ in range(sweeps):
        # (D + L) x_new = b - U x_old
        rhs = b - upper @ x
        x = scipy.linalg.solve_triangular(lower, rhs, lower=True)
    return x


def prefactor_close(kernel, cloud, box_pts, near_samples, gs_sweeps, flops=None):
    """Close-field term G(B_i, S_C) A_cc^-1 (transpose-solved by symmetry)."""
    nb, nc = len(box_pts), len(near_samples)
    if nc == 0:
        return np.zeros((nb, 0))
    a_cc = kernels.gen_block(kernel, near_samples, near_samples, cloud)
    g = kernels.gen_block(kernel, near_samples, box_pts, cloud)
    if gs_sweeps == 0:
        c, low = scipy.linalg.cho_factor(a_cc, lower=True)
        x = scipy.linalg.cho_solve((c, low), g)
        cost = nc ** 3 // 3 + 2 * nc * nc * nb
    else:
        x = gauss_seidel_solve(a_cc, g, gs_sweeps)
        cost = gs_sweeps * 2 * nc * nc * nb
    if flops is not None:
        flops["prefactor"] = flops.get("prefactor", 0) + cost
    return x.T


def build_basis_for_box(kernel, cloud, box_pts, far_pts, close_block,
                        rank=None, tol=None, row_weight=None):
    """Composite basis from [G(B_i, far) | close_block] via the ID."""
    far_block = kernels.gen_block(kernel, box_pts, far_pts, cloud)
    samples = np.hstack([far_block, close_block])
    if samples.shape[1] == 0:
        # no interactions anywhere: the box is pure redundant
        n = len(box_pts)
        return dense_core.BasisDecomposition(
            q_skel=np.zeros((n, 0)), q_red=np.eye(n),
            skeleton=np.zeros(0, dtype=np.int64), rank=0,
            frame=np.zeros((0, 0)))
    return dense_core.id_basis(samples, rank=rank, tol=tol, row_weight=row_weight)


def construct(kernel, tree, lists, cfg, cloud):
    """Build the full hierarchical representation bottom-up."""
    h2 = H2Matrix(tree=tree, lists=lists, kernel=kernel, cloud=cloud, config=cfg)
    depth = tree.depth
    flops = h2.build_flops
    flops.setdefault("prefactor", 0)

    if depth == 0:
        allpts = np.arange(cloud.count, dtype=np.int64)
        h2.eff_points[(0, 0)] = allpts
        h2.near_blocks[(0, 0, 0)] = kernels.gen_block(kernel, allpts, allpts, cloud)
        return h2

    for i, box in enumerate(tree.leaves):
        h2.eff_points[(depth, i)] = np.arange(box.begin, box.end, dtype=np.int64)

    for l in range(depth, 0, -1):
        nb = 2 ** l
        for i in range(nb):
            pts = h2.eff_points[(l, i)]
            far_pts = sample_far(tree, lists, h2.eff_points, l, i, cfg.s_far, cfg.seed)
            near_pts = sample_near(tree, lists, h2.eff_points, l, i, cfg.s_near, cfg.seed)
            close = prefactor_close(kernel, cloud, pts, near_pts, cfg.gs_sweeps, flops)
            if l < depth:
                cl, cr = h2.bases[(l + 1, 2 * i)], h2.bases[(l + 1, 2 * i + 1)]
                w = scipy.linalg.block_diag(cl.frame, cr.frame)
            else:
                w = None
            basis = build_basis_for_box(kernel, cloud, pts, far_pts, close,
                                        rank=cfg.rank, tol=cfg.tol, row_weight=w)
            if basis.rank == 0 and _has_far_ancestry(lists, l, i):
                raise StructureError(
                    f"box ({l}, {i}) got rank 0 but participates in far interactions")
            h2.bases[(l, i)] = basis
            h2.skeletons[(l, i)] = pts[basis.skeleton]
        for (i, j) in lists.near[l]:
            if i >= j:
                h2.near_blocks[(l, i, j)] = kernels.gen_block(
                    kernel, h2.eff_points[(l, i)], h2.eff_points[(l, j)], cloud)
        for (i, j) in lists.far[l]:
            if i > j:
                g = kernels.gen_block(kernel, h2.skeletons[(l, i)],
                                      h2.skeletons[(l, j)], cloud)
                fi = h2.bases[(l, i)].frame
                fj = h2.bases[(l, j)].frame
                h2.couplings[(l, i, j)] = fi @ g @ fj.T
        if l > 1:
            for p in range(2 ** (l - 1)):
                h2.eff_points[(l - 1, p)] = np.concatenate(
                    [h2.skeletons[(l, 2 * p)], h2.skeletons[(l, 2 * p + 1)]])
    return h2


def _has_far_ancestry(lists, level, box):
    i = box
    for l in range(level, 0, -1):
        if any(a == i for (a, _) in lists.far[l]):
            return True
        i //= 2
    return False


def h2_matvec(h2, x):
    """y = A x through the hierarchical representation (tree order)."""
    x = np.asarray(x, dtype=np.float64)
    vec = x.ndim == 1
    xm = x.reshape(h2.count, -1)
    if xm.shape[0] != h2.count:
        raise ValueError("length mismatch")
    tree, lists = h2.tree, h2.lists
    depth = tree.depth
    y = np.zeros_like(xm)

    if depth == 0:
        y = h2.near_blocks[(0, 0, 0)] @ xm
        return y[:, 0] if vec else y

    # upward pass: skeleton coefficients per box per level
    xhat = {}
    for l in range(depth, 0, -1):
        for i in range(2 ** l):
            if l == depth:
                box = tree.box(l, i)
                seg = xm[box.begin:box.end]
            else:
                seg = np.vstack([xhat[(l + 1, 2 * i)], xhat[(l + 1, 2 * i + 1)]])
            xhat[(l, i)] = h2.bases[(l, i)].q_skel.T @ seg

    # coupling products
    yhat = {key: np.zeros_like(val) for key, val in xhat.items()}
    for l in range(depth, 0, -1):
        for (i, j) in lists.far[l]:
            yhat[(l, i)] += h2.coupling(l, i, j) @ xhat[(l, j)]

    # downward pass
    for l in range(1, depth + 1):
        for i in range(2 ** l):
            full = h2.bases[(l, i)].q_skel @ yhat[(l, i)]
            if l == depth:
                box = tree.box(l, i)
                y[box.begin:box.end] += full
            else:
                kl = h2.bases[(l + 1, 2 * i)].rank
                yhat[(l + 1, 2 * i)] += full[:kl]
                yhat[(l + 1, 2 * i + 1)] += full[kl:]

    # leaf-level dense near products
    for (i, j) in lists.near[depth]:
        bi = tree.box(depth, i)
        bj = tree.box(depth, j)
        y[bi.begin:bi.end] += h2.near_block(depth, i, j) @ xm[bj.begin:bj.end]

    return y[:, 0] if vec else y
