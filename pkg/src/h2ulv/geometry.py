"""3-D point clouds, binary cluster trees, and near/far interaction lists.

Points are generated (sphere surface / unit cube) or loaded from file,
then reordered in place by recursive median bisection so that every box
of the cluster tree owns a contiguous index range.  Admissibility of a
box pair is the usual geometric criterion dist >= eta * max(radius).
"""

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import H2Error, PointFormatError

_GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))

CSV_HEADER = "x,y,z"
BIN_MAGIC = b"H2PTS\0"


@dataclass
class PointCloud:
    """N points in 3-D plus the permutation tree order -> input order."""

    points: np.ndarray  # (count, 3) float64
    perm: np.ndarray  # (count,) int64; points[t] == original[perm[t]]

    @property
    def count(self):
        return self.points.shape[0]


@dataclass
class Box:
    level: int
    index_in_level: int
    begin: int
    end: int
    center: np.ndarray
    radius: float

    @property
    def size(self):
        return self.end - self.begin


@dataclass
class ClusterTree:
    depth: int
    boxes: list  # boxes[l] is the list of 2^l Box objects at level l
    leaf_max: int

    def level(self, l):
        return self.boxes[l]

    def box(self, l, i):
        return self.boxes[l][i]

    @property
    def leaves(self):
        return self.boxes[self.depth]


@dataclass
class InteractionLists:
    """Per-level sets of ordered box pairs; near = dense, far = low rank."""

    near: list = field(default_factory=list)  # near[l] is a set of (i, j)
    far: list = field(default_factory=list)


def gen_sphere_surface(n, seed=0):
    """n roughly equispaced points on the unit sphere (Fibonacci lattice).

    The seed only rotates the starting phase of the golden-angle spiral,
    so the sampling quality is identical for every seed.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / n
    phase = 2.0 * math.pi * ((seed * 0.6180339887498949) % 1.0)
    phi = i * _GOLDEN_ANGLE + phase
    rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    pts = np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    return PointCloud(points=pts, perm=np.arange(n, dtype=np.int64))


def gen_uniform_cube(n, seed=0):
    """n pseudo-random points in the unit cube [0,1]^3."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    pts = rng.random((n, 3))
    return PointCloud(points=pts, perm=np.arange(n, dtype=np.int64))


def load_points(path):
    """Load a point cloud from CSV (`x,y,z` header) or binary (H2PTS)."""
    with open(path, "rb") as f:
        head = f.read(6)
        if head == BIN_MAGIC:
            raw = f.read(8)
            if len(raw) < 8:
                raise PointFormatError(path, "truncated header (missing count)")
            (count,) = struct.unpack("<Q", raw)
            if count == 0:
                raise PointFormatError(path, "empty point cloud (count = 0)")
            body = f.read(count * 24)
            if len(body) < count * 24:
                raise PointFormatError(
                    path, f"truncated payload at byte offset {14 + len(body)}"
                )
            pts = np.frombuffer(body, dtype="<f8").reshape(count, 3).astype(np.float64)
            if not np.all(np.isfinite(pts)):
                bad = int(np.argwhere(~np.isfinite(pts))[0, 0])
                raise PointFormatError(path, f"non-finite coordinate in record {bad}")
            return PointCloud(points=pts, perm=np.arange(count, dtype=np.int64))
    # fall through to text parse
    rows = []
    with open(path, "r") as f:
        header = f.readline().strip()
        if header != CSV_HEADER:
            raise PointFormatError(path, f"expected header '{CSV_HEADER}'", line=1)
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise PointFormatError(path, "expected 3 comma-separated values", line=lineno)
            try:
                xyz = [float(p) for p in parts]
            except ValueError:
                raise PointFormatError(path, f"malformed number in '{line}'", line=lineno)
            if not all(math.isfinite(v) for v in xyz):
                raise PointFormatError(path, "non-finite coordinate", line=lineno)
            rows.append(xyz)
    if not rows:
        raise PointFormatError(path, "empty point cloud")
    pts = np.asarray(rows, dtype=np.float64)
    return PointCloud(points=pts, perm=np.arange(len(rows), dtype=np.int64))


def save_points(cloud, path, fmt="csv"):
    if fmt == "csv":
        with open(path, "w") as f:
            f.write(CSV_HEADER + "\n")
            for x, y, z in cloud.points:
                f.write(f"{float(x)!r},{float(y)!r},{float(z)!r}\n")
    elif fmt == "bin":
        with open(path, "wb") as f:
            f.write(BIN_MAGIC)
            f.write(struct.pack("<Q", cloud.count))
            f.write(np.ascontiguousarray(cloud.points, dtype="<f8").tobytes())
    else:
        raise ValueError(f"unknown point format '{fmt}'")


def _make_box(level, idx, pts, begin, end):
    sub = pts[begin:end]
    center = sub.mean(axis=0)
    radius = float(np.sqrt(((sub - center) ** 2).sum(axis=1).max()))
    return Box(level=level, index_in_level=idx, begin=begin, end=end,
               center=center, radius=radius)


def build_tree(cloud, leaf_max):
    """Recursive median bisection along the longest bounding-box axis.

    Points (and perm) are reordered in place into tree order.  The tree
    is a perfect binary tree with depth ceil(log2(ceil(count/leaf_max)))
    and sibling sizes differing by at most one, so a depth-0 (root-only)
    tree is produced whenever count <= leaf_max.
    """
    if cloud.count < 1:
        raise ValueError("cloud must contain at least one point")
    if leaf_max < 1:
        raise ValueError("leaf_max must be >= 1")
    n = cloud.count
    n_leaves = max(1, -(-n // leaf_max))  # ceil division
    depth = max(0, math.ceil(math.log2(n_leaves)))
    pts = cloud.points
    perm = cloud.perm

    # ranges[l] holds the [begin, end) split of every box at level l
    ranges = [[(0, n)]]
    for l in range(depth):
        nxt = []
        for begin, end in ranges[-1]:
            sub = pts[begin:end]
            spread = sub.max(axis=0) - sub.min(axis=0)
            axis = int(np.argmax(spread))  # argmax ties break x -> y -> z
            order = np.argsort(sub[:, axis], kind="stable")
            pts[begin:end] = sub[order]
            perm[begin:end] = perm[begin:end][order]
            m = end - begin
            mid = begin + (m - m // 2)  # left child takes the ceil half
            nxt.append((begin, mid))
            nxt.append((mid, end))
        ranges.append(nxt)

    boxes = []
    for l in range(depth + 1):
        boxes.append([_make_box(l, i, pts, b, e) for i, (b, e) in enumerate(ranges[l])])
    return ClusterTree(depth=depth, boxes=boxes, leaf_max=leaf_max)


def admissible(a, b, eta):
    """True (far / low-rank) iff dist(centers) >= eta * max(radius), a != b."""
    if a is b or (a.level == b.level and a.index_in_level == b.index_in_level):
        return False
    dist = float(np.linalg.norm(a.center - b.center))
    return dist >= eta * max(a.radius, b.radius)


def build_interaction_lists(tree, eta):
    """Top-down dual traversal: a pair is considered at level l iff its
    parent pair was near at level l-1; considered pairs are classified
    far (admissible) or near (everything else, including leaves)."""
    near = [set() for _ in range(tree.depth + 1)]
    far = [set() for _ in range(tree.depth + 1)]
    near[0].add((0, 0))
    for l in range(1, tree.depth + 1):
        lvl = tree.boxes[l]
        for (pi, pj) in near[l - 1]:
            for i in (2 * pi, 2 * pi + 1):
                for j in (2 * pj, 2 * pj + 1):
                    if admissible(lvl[i], lvl[j], eta):
                        far[l].add((i, j))
                    else:
                        near[l].add((i, j))
    return InteractionLists(near=near, far=far)
