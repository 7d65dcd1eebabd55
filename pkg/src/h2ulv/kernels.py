"""Kernel (Green's function) evaluation for dense matrix entries/blocks.

The matrix entry for points i, j is K(r_ij) off the diagonal and a
constant positive shift on the diagonal; the shift keeps the assembled
matrix positive definite at the problem sizes exercised here.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import CoincidentPointsError

FAMILIES = ("laplace", "yukawa")


@dataclass(frozen=True)
class KernelSpec:
    family: str = "laplace"
    diagonal_shift: float = 1.0e3
    yukawa_decay: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family '{self.family}'")
        if self.diagonal_shift <= 0:
            raise ValueError("diagonal_shift must be positive")
        if self.yukawa_decay <= 0:
            raise ValueError("yukawa_decay must be positive")


def eval_entry(k, i_idx, j_idx, xi, xj):
    """Single matrix entry; i_idx == j_idx selects the diagonal shift."""
    if i_idx == j_idx:
        return k.diagonal_shift
    r = float(np.linalg.norm(np.asarray(xi, dtype=np.float64)
                             - np.asarray(xj, dtype=np.float64)))
    if r == 0.0:
        raise CoincidentPointsError(i_idx, j_idx)
    if k.family == "laplace":
        return 1.0 / r
    return np.exp(-k.yukawa_decay * r) / r


def gen_block(k, rows, cols, cloud):
    """Dense |rows| x |cols| block over global point indices."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if rows.size == 0 or cols.size == 0:
        return np.zeros((rows.size, cols.size))
    r = cdist(cloud.points[rows], cloud.points[cols])
    diag = rows[:, None] == cols[None, :]
    zero = (r == 0.0) & ~diag
    if np.any(zero):
        a, b = np.argwhere(zero)[0]
        raise CoincidentPointsError(int(rows[a]), int(cols[b]))
    with np.errstate(divide="ignore", invalid="ignore"):
        if k.family == "laplace":
            block = 1.0 / r
        else:
            block = np.exp(-k.yukawa_decay * r) / r
    block[diag] = k.diagonal_shift
    return block
