"""Dense block primitives and the batched-execution planner.

Blocks are plain float64 numpy arrays.  The planner groups same-kind
operations of one level/phase, pads their dimensions to the level
maximum rounded up to a multiple of 4, and splits groups so that the
aggregate temporary footprint never exceeds the diagonal-block budget.

Padding is modeled, not performed: the plan carries padded dimensions
and accounts the waste flops they imply, while execution computes every
operation on its true region.  (Genuinely padded BLAS calls are not
bitwise reproducible — the libraries pick different internal blockings
for different dimensions — so executing padded would silently break the
contract that batched and one-at-a-time execution agree bit for bit.)
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import NotPositiveDefiniteError, SingularTriangularError


@dataclass
class BasisDecomposition:
    """Orthonormal split of a box's n degrees of freedom.

    [q_red | q_skel] is an orthonormal n x n matrix; q_skel spans the
    skeleton (kept) part, q_red its complement.  `skeleton` lists the k
    selected row indices; `frame` is the cumulative k x k transform F
    with q_skel @ frame equal to the interpolation operator, so that
    q_skel.T @ samples ~= frame @ samples[skeleton].
    """

    q_skel: np.ndarray
    q_red: np.ndarray
    skeleton: np.ndarray
    rank: int
    frame: np.ndarray

    @property
    def n(self):
        return self.q_skel.shape[0]

    @property
    def q_full(self):
        """Assembled orthonormal transform, redundant slab first."""
        return np.hstack([self.q_red, self.q_skel])


def cholesky(a, context=None):
    """Lower Cholesky factor; rejects asymmetry beyond 1e-10 relative."""
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    scale = np.abs(a).max()
    if scale > 0 and np.abs(a - a.T).max() > 1e-10 * scale:
        raise ValueError("matrix is not symmetric to 1e-10 relative")
    c, info = scipy.linalg.lapack.dpotrf(a, lower=1)
    if info > 0:
        lvl, box = context if context is not None else (None, None)
        raise NotPositiveDefiniteError(info - 1, level=lvl, box=box)
    if info < 0:
        raise ValueError(f"illegal argument {-info} to dpotrf")
    return np.tril(c)


def tri_solve(l, b, side="left", transposed=False):
    """Solve op(L) X = B (side=left) or X op(L) = B (side=right)."""
    l = np.asarray(l, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if l.shape[0] == 0 or b.size == 0:
        return np.zeros_like(b)
    if np.any(np.diag(l) == 0.0):
        raise SingularTriangularError("zero diagonal entry in triangular factor")
    if side == "left":
        return scipy.linalg.solve_triangular(l, b, lower=True, trans="T" if transposed else "N")
    # X op(L) = B  <=>  op(L).T X.T = B.T
    xt = scipy.linalg.solve_triangular(l, b.T, lower=True, trans="N" if transposed else "T")
    return xt.T


def multiply(a, b, transpose_a=False, transpose_b=False, accumulate_into=None, scale=1.0):
    """C (+)= scale * op(A) @ op(B)."""
    oa = a.T if transpose_a else a
    ob = b.T if transpose_b else b
    if oa.shape[1] != ob.shape[0]:
        raise ValueError(f"inner dimensions {oa.shape} x {ob.shape} do not conform")
    c = scale * (oa @ ob) if scale != 1.0 else oa @ ob
    if accumulate_into is not None:
        return accumulate_into + c
    return c


def id_basis(samples, rank=None, tol=None, row_weight=None):
    """Interpolative decomposition via column-pivoted QR of samples.T.

    Selects k skeleton rows of the n x m sample matrix (k = rank, or the
    smallest k with pivot ratio |r_kk / r_00| <= tol) and builds the
    interpolation operator T (T[skeleton] = I) from the pivoted R
    factor.  The orthonormal basis comes from a full QR of T — or of
    row_weight applied blockwise to T when the rows of `samples` are
    themselves coefficients in child frames — giving q_skel, the
    completing q_red, and the cumulative frame F with q_skel @ F = W T.
    """
    if (rank is None) == (tol is None):
        raise ValueError("exactly one of rank/tol must be given")
    samples = np.asarray(samples, dtype=np.float64)
    n, m = samples.shape
    if m < 1:
        raise ValueError("need at least one sample column")

    q, r, piv = scipy.linalg.qr(samples.T, pivoting=True, mode="economic")
    d = np.abs(np.diag(r))
    if d.size == 0 or d[0] == 0.0:
        k = 0
    elif rank is not None:
        k = min(rank, n, m)
    else:
        small = np.nonzero(d / d[0] <= tol)[0]
        k = int(small[0]) if small.size else min(n, m)
    k = min(k, int((d > 0).sum()))  # never keep exactly-zero pivots

    skel_order = np.argsort(piv[:k])
    skel = piv[:k][skel_order]
    # interpolation operator: T[skel] = I, other rows from R11^-1 R12
    t = np.zeros((n, k))
    if k:
        t[piv[:k]] = np.eye(k)
        if n > k:
            x = scipy.linalg.solve_triangular(r[:k, :k], r[:k, k:], lower=False)
            t[piv[k:]] = x.T
        t = t[:, skel_order]  # columns follow the sorted skeleton

    if k:
        z = t if row_weight is None else row_weight @ t
        qz, rz = np.linalg.qr(z, mode="complete")
        # fix signs so the frame has a non-negative diagonal
        signs = np.sign(np.diag(rz[:k, :k]))
        signs[signs == 0] = 1.0
        q_skel = qz[:, :k] * signs
        frame = signs[:, None] * rz[:k, :]
        q_red = qz[:, k:]
    else:
        q_skel = np.zeros((n, 0))
        frame = np.zeros((0, 0))
        q_red = np.eye(n)
    return BasisDecomposition(q_skel=q_skel, q_red=q_red,
                              skeleton=skel.astype(np.int64), rank=k, frame=frame)


def pad_for_cholesky(a, padded_n):
    """Embed a square block top-left in a padded_n square with unit
    diagonal fill, so the padded Cholesky factor extends the true one."""
    n = a.shape[0]
    if padded_n < n:
        raise ValueError("padded size smaller than block")
    out = np.zeros((padded_n, padded_n))
    out[:n, :n] = a
    idx = np.arange(n, padded_n)
    out[idx, idx] = 1.0
    return out


def flop_count(kind, dims):
    """Leading-order flop model: cholesky n^3/3, tri_solve n^2 m,
    multiply 2 m n k."""
    if kind == "cholesky":
        (n,) = dims
        return n ** 3 // 3
    if kind == "tri_solve":
        n, m = dims
        return n * n * m
    if kind == "multiply":
        m, n, k = dims
        return 2 * m * n * k
    if kind == "diag_fill":
        (n,) = dims
        return 0
    raise ValueError(f"unknown op kind '{kind}'")


@dataclass
class BlockOp:
    """One dense operation destined for a batch group.

    dims are the true dimensions: (n,) for cholesky, (n, m) for
    tri_solve (n = triangle order, m = rhs count), (m, n, k) for
    multiply.  `sink` receives the true-region result.
    """

    kind: str
    dims: tuple
    a: np.ndarray = None
    b: np.ndarray = None
    transpose_a: bool = False
    transpose_b: bool = False
    scale: float = 1.0
    accumulate: np.ndarray = None
    side: str = "left"
    transposed: bool = False
    context: tuple = None
    sink: object = None


@dataclass
class BatchGroup:
    kind: str
    padded_dims: tuple
    ops: list


@dataclass
class BatchPlan:
    groups: list = field(default_factory=list)
    true_flops: int = 0
    padded_flops: int = 0

    @property
    def op_count(self):
        return sum(len(g.ops) for g in self.groups)


def _round4(x):
    return max(4, -(-x // 4) * 4) if x > 0 else 0


def plan_batches(level_ops, budget_blocks=None):
    """Group ops of one level/phase by kind, pad dims to the per-kind
    maximum rounded to a multiple of 4, and split groups whose aggregate
    temporary storage exceeds the budget (budget_blocks diagonal-sized
    footprints, i.e. at most budget_blocks ops per group)."""
    plan = BatchPlan()
    by_kind = {}
    for op in level_ops:
        by_kind.setdefault(op.kind, []).append(op)
    for kind, ops in by_kind.items():
        ndim = len(ops[0].dims)
        maxdims = tuple(_round4(max(op.dims[d] for op in ops)) for d in range(ndim))
        chunk = len(ops) if not budget_blocks else max(1, budget_blocks)
        for start in range(0, len(ops), chunk):
            plan.groups.append(BatchGroup(kind=kind, padded_dims=maxdims,
                                          ops=ops[start:start + chunk]))
        for op in ops:
            plan.true_flops += flop_count(kind, op.dims)
            plan.padded_flops += flop_count(kind, maxdims)
    return plan


def _embed(x, shape):
    out = np.zeros(shape)
    out[: x.shape[0], : x.shape[1]] = x
    return out


def run_op(op):
    """Execute a single BlockOp on its true region."""
    if op.kind == "cholesky":
        res = cholesky(op.a, context=op.context)
    elif op.kind == "tri_solve":
        res = tri_solve(op.a, op.b, side=op.side, transposed=op.transposed)
    elif op.kind == "multiply":
        res = multiply(op.a, op.b, op.transpose_a, op.transpose_b,
                       op.accumulate, op.scale)
    else:
        raise ValueError(f"unknown op kind '{op.kind}'")
    if op.sink is not None:
        op.sink(res)
    return res


def run_plan(plan):
    """Execute a BatchPlan group by group (ops within a group have
    pairwise disjoint outputs by construction)."""
    for group in plan.groups:
        for op in group.ops:
            run_op(op)


def run_sequential(level_ops):
    """Reference path: execute ops one at a time, no padding."""
    for op in level_ops:
        run_op(op)
