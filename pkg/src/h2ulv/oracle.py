"""Dense brute-force references and structural verifiers.

`verify_fillin` checks empirically that the elimination cross terms
A_ji^SR (A_ii^RR)^-1 A_ik^RS (and the RR/RS/SR-targeted companions)
vanish for every triple except i = j = k, which is the single diagonal
Schur update the factorization performs.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import h2_build, kernels
from .errors import OracleCapError

DEFAULT_CAP = 16384


@dataclass
class FillinReport:
    """Relative cross-term norms per sampled (level, i, j, k) triple."""

    entries: list = field(default_factory=list)  # (l, i, j, k, {target: relnorm})
    level_scale: dict = field(default_factory=dict)
    max_offdiag: float = 0.0
    min_diag: float = float("inf")
    max_diag: float = 0.0
    n_offdiag: int = 0
    n_diag: int = 0


def dense_assemble(kernel, cloud, cap=DEFAULT_CAP):
    """Full N x N kernel matrix in the cloud's current (tree) order."""
    n = cloud.count
    if n > cap:
        raise OracleCapError(f"N = {n} exceeds the dense-oracle cap {cap}")
    idx = np.arange(n, dtype=np.int64)
    return kernels.gen_block(kernel, idx, idx, cloud)


def dense_solve(a, b):
    c, low = scipy.linalg.cho_factor(a, lower=True)
    return scipy.linalg.cho_solve((c, low), b)


def relative_error(x, x_ref):
    ref = np.linalg.norm(x_ref)
    if ref == 0.0:
        raise ValueError("reference vector has zero norm")
    return float(np.linalg.norm(np.asarray(x) - np.asarray(x_ref)) / ref)


def matvec_error(h2, a_dense, trials=3, seed=0):
    """Max relative error of the hierarchical matvec vs the dense product."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        v = rng.standard_normal(h2.count)
        ref = a_dense @ v
        got = h2_build.h2_matvec(h2, v)
        worst = max(worst, relative_error(got, ref))
    return worst


def _slab(factors, kind, l, a, b):
    """Retained sparsified slab for ordered pair (a, b), using symmetry
    of the transformed matrix for the unstored triangle."""
    ret = factors.retained
    if (kind, l, a, b) in ret:
        return ret[(kind, l, a, b)]
    mirror = {"rr": "rr", "ss": "ss", "rs": "sr", "sr": "rs", "ss0": "ss0"}[kind]
    blk = ret.get((mirror, l, b, a))
    return None if blk is None else blk.T


def verify_fillin(h2, factors, sample=None, seed=0):
    """Empirical form of the fill-in theorem over factor triples.

    For each triple (i, j, k) with (j, i) and (i, k) near at a level,
    the four targeted terms of the elimination update
    [A_ji^RR; A_ji^SR] (A_ii^RR)^-1 [A_ik^RR, A_ik^RS]
    are computed from the retained sparsified slabs and reported
    relative to the level scale (max diagonal block Frobenius norm).
    """
    if factors.retained is None:
        raise ValueError("factorize(..., retain=True) required for fill-in checks")
    report = FillinReport()
    lists = h2.lists
    rng = np.random.default_rng(seed)
    for l in range(h2.tree.depth, 0, -1):
        nb = 2 ** l
        scale = max(np.linalg.norm(factors.retained[("ss0", l, i, i)])
                    + np.linalg.norm(factors.retained[("rr", l, i, i)])
                    for i in range(nb))
        report.level_scale[l] = scale
        neighbors = {i: sorted(j for (a, j) in lists.near[l] if a == i)
                     for i in range(nb)}
        triples = []
        for i in range(nb):
            for j, k in itertools.product(neighbors[i], neighbors[i]):
                triples.append((i, j, k))
        diag = [(i, i, i) for i in range(nb)]
        off = [t for t in triples if not (t[0] == t[1] == t[2])]
        if sample is not None and len(off) > sample:
            pick = rng.choice(len(off), size=sample, replace=False)
            off = [off[p] for p in sorted(pick)]
        rr_inv = {}
        for (i, j, k) in diag + off:
            if i not in rr_inv:
                rr = factors.retained[("rr", l, i, i)]
                rr_inv[i] = np.linalg.inv(rr) if rr.size else rr
            left_rr = _slab(factors, "rr", l, j, i)
            left_sr = _slab(factors, "sr", l, j, i)
            right_rr = _slab(factors, "rr", l, i, k)
            right_rs = _slab(factors, "rs", l, i, k)
            inv = rr_inv[i]
            terms = {}
            for tname, lft, rgt in (("rr", left_rr, right_rr),
                                    ("rs", left_rr, right_rs),
                                    ("sr", left_sr, right_rr),
                                    ("ss", left_sr, right_rs)):
                if lft is None or rgt is None or lft.size == 0 or rgt.size == 0:
                    terms[tname] = 0.0
                else:
                    terms[tname] = float(np.linalg.norm(lft @ inv @ rgt) / scale)
            report.entries.append((l, i, j, k, terms))
            if i == j == k:
                # the legitimate update: the SS-targeted diagonal Schur term
                report.n_diag += 1
                report.min_diag = min(report.min_diag, terms["ss"])
                report.max_diag = max(report.max_diag, terms["ss"])
            else:
                report.n_offdiag += 1
                report.max_offdiag = max(report.max_offdiag, max(terms.values()))
    if report.n_diag == 0:
        report.min_diag = 0.0
    return report


def flop_report_compare(build_flops, factor_flops):
    """Share of the close-field pre-factorization in the total flops."""
    pre = build_flops.get("prefactor", 0)
    fac = factor_flops["total_true"]
    total = pre + fac
    return {
        "prefactor_flops": pre,
        "factor_flops": fac,
        "ratio": pre / total if total else 0.0,
    }
