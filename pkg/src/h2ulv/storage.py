"""Persistence: manifest.json + blocks.bin containers, and vector files.

All dense blocks live concatenated in blocks.bin as little-endian
float64; manifest.json records byte offsets and dimensions, so a
round-trip is bit-exact.  The ULV factors share the container as an
appended "ulv" section.
"""

import json
import os
import struct

import numpy as np

from . import dense_core, geometry, h2_build, kernels, ulv_factor
from .errors import PointFormatError

FORMAT_VERSION = 1
VEC_MAGIC = b"H2VEC\0"


class _BlockWriter:
    def __init__(self, path, append=False):
        self.f = open(path, "ab" if append else "wb")
        self.index = {}

    def put(self, name, arr):
        arr = np.ascontiguousarray(arr, dtype="<f8")
        off = self.f.tell()
        self.f.write(arr.tobytes())
        shape = arr.shape if arr.ndim == 2 else (arr.shape[0], 1)
        self.index[name] = [off, int(shape[0]), int(shape[1])]

    def close(self):
        self.f.close()


class _BlockReader:
    def __init__(self, path, index):
        self.raw = np.memmap(path, dtype="<f8", mode="r")
        self.index = index

    def get(self, name, flat=False):
        off, r, c = self.index[name]
        n = r * c
        arr = np.array(self.raw[off // 8: off // 8 + n], dtype=np.float64)
        return arr if flat else arr.reshape(r, c)


def _key(*parts):
    return "_".join(str(p) for p in parts)


def save_h2(h2, outdir):
    os.makedirs(outdir, exist_ok=True)
    w = _BlockWriter(os.path.join(outdir, "blocks.bin"))
    w.put("pts", h2.cloud.points)
    for (l, i), b in h2.bases.items():
        w.put(_key("qs", l, i), b.q_skel)
        w.put(_key("qr", l, i), b.q_red)
        w.put(_key("fr", l, i), b.frame)
    for (l, i, j), blk in h2.near_blocks.items():
        w.put(_key("near", l, i, j), blk)
    for (l, i, j), blk in h2.couplings.items():
        w.put(_key("coup", l, i, j), blk)
    w.close()

    tree, cfg = h2.tree, h2.config
    manifest = {
        "version": FORMAT_VERSION,
        "kind": "h2",
        "count": h2.count,
        "depth": tree.depth,
        "leaf_max": tree.leaf_max,
        "perm": h2.cloud.perm.tolist(),
        "kernel": {"family": h2.kernel.family,
                   "diag": h2.kernel.diagonal_shift,
                   "decay": h2.kernel.yukawa_decay},
        "config": {"eta": cfg.eta, "leaf_max": cfg.leaf_max, "rank": cfg.rank,
                   "tol": cfg.tol, "s_far": cfg.s_far, "s_near": cfg.s_near,
                   "gs_sweeps": cfg.gs_sweeps, "seed": cfg.seed},
        "boxes": [[{"begin": b.begin, "end": b.end,
                    "center": list(map(float, b.center)),
                    "radius": b.radius} for b in lvl] for lvl in tree.boxes],
        "near": [sorted(map(list, s)) for s in h2.lists.near],
        "far": [sorted(map(list, s)) for s in h2.lists.far],
        "bases": {_key(l, i): {"rank": b.rank,
                               "skeleton": b.skeleton.tolist()}
                  for (l, i), b in h2.bases.items()},
        "skeletons": {_key(l, i): s.tolist() for (l, i), s in h2.skeletons.items()},
        "build_flops": h2.build_flops,
        "blocks": w.index,
    }
    with open(os.path.join(outdir, "manifest.json"), "w") as f:
        json.dump(manifest, f)
    return manifest


def load_h2(outdir):
    with open(os.path.join(outdir, "manifest.json")) as f:
        manifest = json.load(f)
    rd = _BlockReader(os.path.join(outdir, "blocks.bin"), manifest["blocks"])
    pts = rd.get("pts")
    cloud = geometry.PointCloud(points=pts,
                                perm=np.asarray(manifest["perm"], dtype=np.int64))
    boxes = [[geometry.Box(level=l, index_in_level=i, begin=b["begin"],
                           end=b["end"], center=np.asarray(b["center"]),
                           radius=b["radius"])
              for i, b in enumerate(lvl)]
             for l, lvl in enumerate(manifest["boxes"])]
    tree = geometry.ClusterTree(depth=manifest["depth"], boxes=boxes,
                                leaf_max=manifest["leaf_max"])
    lists = geometry.InteractionLists(
        near=[set(map(tuple, s)) for s in manifest["near"]],
        far=[set(map(tuple, s)) for s in manifest["far"]])
    kc = manifest["kernel"]
    kernel = kernels.KernelSpec(family=kc["family"], diagonal_shift=kc["diag"],
                                yukawa_decay=kc["decay"])
    cc = manifest["config"]
    cfg = h2_build.BuildConfig(eta=cc["eta"], leaf_max=cc["leaf_max"],
                               rank=cc["rank"], tol=cc["tol"], s_far=cc["s_far"],
                               s_near=cc["s_near"], gs_sweeps=cc["gs_sweeps"],
                               seed=cc["seed"])
    h2 = h2_build.H2Matrix(tree=tree, lists=lists, kernel=kernel, cloud=cloud,
                           config=cfg)
    h2.build_flops = manifest.get("build_flops", {})
    for key, meta in manifest["bases"].items():
        l, i = map(int, key.split("_"))
        h2.bases[(l, i)] = dense_core.BasisDecomposition(
            q_skel=rd.get(_key("qs", l, i)), q_red=rd.get(_key("qr", l, i)),
            skeleton=np.asarray(meta["skeleton"], dtype=np.int64),
            rank=meta["rank"], frame=rd.get(_key("fr", l, i)))
    for key, s in manifest["skeletons"].items():
        l, i = map(int, key.split("_"))
        h2.skeletons[(l, i)] = np.asarray(s, dtype=np.int64)
    for name in manifest["blocks"]:
        parts = name.split("_")
        if parts[0] == "near":
            l, i, j = map(int, parts[1:])
            h2.near_blocks[(l, i, j)] = rd.get(name)
        elif parts[0] == "coup":
            l, i, j = map(int, parts[1:])
            h2.couplings[(l, i, j)] = rd.get(name)
    # effective points: leaves own their ranges, parents their children's
    # skeleton concatenation
    depth = tree.depth
    for i, box in enumerate(tree.leaves):
        h2.eff_points[(depth, i)] = np.arange(box.begin, box.end, dtype=np.int64)
    for l in range(depth - 1, 0, -1):
        for i in range(2 ** l):
            h2.eff_points[(l, i)] = np.concatenate(
                [h2.skeletons[(l + 1, 2 * i)], h2.skeletons[(l + 1, 2 * i + 1)]])
    if depth == 0:
        h2.eff_points[(0, 0)] = np.arange(cloud.count, dtype=np.int64)
    return h2


def save_ulv(factors, outdir):
    """Append the factor section to an existing container."""
    path = os.path.join(outdir, "manifest.json")
    with open(path) as f:
        manifest = json.load(f)
    w = _BlockWriter(os.path.join(outdir, "blocks.bin"), append=True)
    for l, lvl in factors.levels.items():
        for i, blk in lvl.lr_diag.items():
            w.put(_key("ulv-lrd", l, i), blk)
        for (i, j), blk in lvl.lr_off.items():
            w.put(_key("ulv-lro", l, i, j), blk)
        for (a, b), blk in lvl.ls.items():
            w.put(_key("ulv-ls", l, a, b), blk)
        for i, blk in lvl.v.items():
            w.put(_key("ulv-v", l, i), blk)
    w.put("ulv-root", factors.root)
    w.close()
    manifest["blocks"].update(w.index)
    manifest["ulv"] = {
        "dims": {str(l): {str(i): list(d) for i, d in lvl.dims.items()}
                 for l, lvl in factors.levels.items()},
        "flops": factors.flops,
        "audit": factors.audit,
    }
    with open(path, "w") as f:
        json.dump(manifest, f)
    return manifest


def load_factors(outdir):
    """Load the container including its factor section."""
    h2 = load_h2(outdir)
    with open(os.path.join(outdir, "manifest.json")) as f:
        manifest = json.load(f)
    if "ulv" not in manifest:
        raise ValueError(f"{outdir} holds no factor section; run factor first")
    rd = _BlockReader(os.path.join(outdir, "blocks.bin"), manifest["blocks"])
    factors = ulv_factor.ULVFactors(h2=h2)
    factors.flops = manifest["ulv"]["flops"]
    factors.audit = manifest["ulv"]["audit"]
    for lstr, dims in manifest["ulv"]["dims"].items():
        l = int(lstr)
        lvl = ulv_factor.ULVLevel()
        lvl.dims = {int(i): tuple(d) for i, d in dims.items()}
        factors.levels[l] = lvl
    for name in manifest["blocks"]:
        parts = name.split("_")
        if parts[0] == "ulv-lrd":
            l, i = map(int, parts[1:])
            factors.levels[l].lr_diag[i] = rd.get(name)
        elif parts[0] == "ulv-lro":
            l, i, j = map(int, parts[1:])
            factors.levels[l].lr_off[(i, j)] = rd.get(name)
        elif parts[0] == "ulv-ls":
            l, a, b = map(int, parts[1:])
            factors.levels[l].ls[(a, b)] = rd.get(name)
        elif parts[0] == "ulv-v":
            l, i = map(int, parts[1:])
            factors.levels[l].v[i] = rd.get(name)
    factors.root = rd.get("ulv-root")
    return h2, factors


def save_vector(v, path, fmt="csv"):
    v = np.asarray(v, dtype=np.float64).ravel()
    if fmt == "csv":
        with open(path, "w") as f:
            for val in v:
                f.write(f"{float(val)!r}\n")
    elif fmt == "bin":
        with open(path, "wb") as f:
            f.write(VEC_MAGIC)
            f.write(struct.pack("<Q", v.size))
            f.write(v.astype("<f8").tobytes())
    else:
        raise ValueError(f"unknown vector format '{fmt}'")


def load_vector(path):
    with open(path, "rb") as f:
        head = f.read(6)
        if head == VEC_MAGIC:
            (count,) = struct.unpack("<Q", f.read(8))
            body = f.read(count * 8)
            if len(body) < count * 8:
                raise PointFormatError(path, "truncated vector payload")
            return np.frombuffer(body, dtype="<f8").astype(np.float64)
    vals = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                vals.append(float(line))
            except ValueError:
                raise PointFormatError(path, f"malformed number '{line}'", line=lineno)
    return np.asarray(vals, dtype=np.float64)
