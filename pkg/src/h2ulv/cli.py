"""Command-line interface: gen / build / factor / solve / sweep / simulate.

Machine-readable summaries go to standard output as JSON; sweep tables
are CSV with a leading config comment line.  Exit codes: 0 success,
2 usage error, 3 numerical (positive-definiteness) failure, 1 other.
"""

import argparse
import json
import math
import sys
import time

import numpy as np

from . import comm_sim, geometry, h2_build, kernels, oracle, storage, ulv_factor, ulv_solve
from .errors import H2Error, NotPositiveDefiniteError


def _build_parser():
    p = argparse.ArgumentParser(prog="h2ulv",
                                description="hierarchical-matrix ULV direct solver")
    sub = p.add_subparsers(dest="command", required=True)
    p._sub = sub

    g = sub.add_parser("gen", help="generate a geometry file")
    g.add_argument("--shape", choices=("sphere", "cube"), required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--format", choices=("csv", "bin"), default="csv")

    b = sub.add_parser("build", help="construct the hierarchical matrix")
    b.add_argument("--points", required=True)
    b.add_argument("--kernel", choices=kernels.FAMILIES, default="laplace")
    b.add_argument("--diag", type=float, default=1.0e3)
    b.add_argument("--decay", type=float, default=1.0)
    b.add_argument("--leaf", type=int, default=64)
    b.add_argument("--eta", type=float, default=1.0)
    b.add_argument("--tol", type=float, default=None)
    b.add_argument("--rank", type=int, default=None)
    b.add_argument("--sfar", type=int, default=0)
    b.add_argument("--snear", type=int, default=0)
    b.add_argument("--gs", type=int, default=2)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--config", default=None)
    b.add_argument("--out", required=True)

    f = sub.add_parser("factor", help="ULV-factorize a stored build")
    f.add_argument("--h2", required=True)
    f.add_argument("--audit", action="store_true")
    f.add_argument("--no-batch", action="store_true")

    s = sub.add_parser("solve", help="solve a linear system from stored factors")
    s.add_argument("--factors", required=True)
    s.add_argument("--rhs", default=None)
    s.add_argument("--rhs-random", type=int, default=None)
    s.add_argument("--mode", choices=("naive", "parallel"), default="parallel")
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=("csv", "bin"), default="csv")

    w = sub.add_parser("sweep", help="run an experiment series, write CSV")
    w.add_argument("--kind", choices=("n", "rank", "eta"), required=True)
    w.add_argument("--grid", required=True,
                   help="comma-separated grid values for the sweep variable")
    w.add_argument("--shape", choices=("sphere", "cube"), default="sphere")
    w.add_argument("--n", type=int, default=8192)
    w.add_argument("--kernel", choices=kernels.FAMILIES, default="laplace")
    w.add_argument("--leaf", type=int, default=None)
    w.add_argument("--eta", type=float, default=1.0)
    w.add_argument("--rank", type=int, default=None)
    w.add_argument("--tol", type=float, default=None)
    w.add_argument("--sfar", type=int, default=0)
    w.add_argument("--snear", type=int, default=0)
    w.add_argument("--gs", type=int, default=2)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--cap", type=int, default=oracle.DEFAULT_CAP)
    w.add_argument("--out", required=True)

    m = sub.add_parser("simulate", help="emit communication traces")
    m.add_argument("--h2", required=True)
    m.add_argument("--procs", type=int, required=True)
    m.add_argument("--out", required=True, help="output file prefix")
    return p


def _apply_config(parser_sub, args):
    """Overlay key=value config-file entries under explicit flags."""
    if getattr(args, "config", None) is None:
        return args
    valid = {a.dest for a in parser_sub._actions}
    overrides = {}
    with open(args.config) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SystemExit(f"config {args.config}:{lineno}: expected key=value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in valid:
                print(f"config {args.config}:{lineno}: unknown key '{key}'",
                      file=sys.stderr)
                sys.exit(2)
            overrides[key] = val
    # flags given on the command line win; detect via sys.argv presence
    for key, val in overrides.items():
        flag = "--" + key.replace("_", "-")
        if flag in sys.argv or f"--{key}" in sys.argv:
            continue
        cur = getattr(args, key)
        if isinstance(cur, bool):
            val = val.lower() in ("1", "true", "yes")
        elif isinstance(cur, int):
            val = int(val)
        elif isinstance(cur, float):
            val = float(val)
        elif cur is None and key in ("rank",):
            val = int(val)
        elif cur is None and key in ("tol",):
            val = float(val)
        setattr(args, key, val)
    return args


def _pipeline(shape, n, seed, kernel_family, cfg, cap=None):
    gen = geometry.gen_sphere_surface if shape == "sphere" else geometry.gen_uniform_cube
    cloud = gen(n, seed)
    tree = geometry.build_tree(cloud, cfg.leaf_max)
    lists = geometry.build_interaction_lists(tree, cfg.eta)
    kern = kernels.KernelSpec(family=kernel_family)
    h2 = h2_build.construct(kern, tree, lists, cfg, cloud)
    return cloud, tree, lists, kern, h2


def cmd_gen(args):
    gen = geometry.gen_sphere_surface if args.shape == "sphere" else geometry.gen_uniform_cube
    cloud = gen(args.n, args.seed)
    geometry.save_points(cloud, args.out, fmt=args.format)
    print(json.dumps({"command": "gen", "n": cloud.count, "out": args.out}))
    return 0


def cmd_build(args):
    if (args.rank is None) == (args.tol is None):
        print("build: exactly one of --rank/--tol is required", file=sys.stderr)
        return 2
    t0 = time.perf_counter()
    cloud = geometry.load_points(args.points)
    tree = geometry.build_tree(cloud, args.leaf)
    lists = geometry.build_interaction_lists(tree, args.eta)
    kern = kernels.KernelSpec(family=args.kernel, diagonal_shift=args.diag,
                              yukawa_decay=args.decay)
    cfg = h2_build.BuildConfig(eta=args.eta, leaf_max=args.leaf, rank=args.rank,
                               tol=args.tol, s_far=args.sfar, s_near=args.snear,
                               gs_sweeps=args.gs, seed=args.seed)
    h2 = h2_build.construct(kern, tree, lists, cfg, cloud)
    storage.save_h2(h2, args.out)
    ranks = [h2.bases[(tree.depth, i)].rank for i in range(2 ** tree.depth)] \
        if tree.depth else []
    print(json.dumps({
        "command": "build", "n": cloud.count, "depth": tree.depth,
        "leaf_rank_max": max(ranks) if ranks else 0,
        "leaf_rank_mean": sum(ranks) / len(ranks) if ranks else 0,
        "prefactor_flops": h2.build_flops.get("prefactor", 0),
        "seconds": time.perf_counter() - t0, "out": args.out}))
    return 0


def cmd_factor(args):
    t0 = time.perf_counter()
    h2 = storage.load_h2(args.h2)
    factors = ulv_factor.factorize(h2, batched=not args.no_batch)
    storage.save_ulv(factors, args.h2)
    summary = {"command": "factor", "true_flops": factors.flops["total_true"],
               "padded_flops": factors.flops["total_padded"],
               "seconds": time.perf_counter() - t0, "out": args.h2}
    if args.audit:
        summary["audit"] = factors.audit
    print(json.dumps(summary))
    return 0


def cmd_solve(args):
    if (args.rhs is None) == (args.rhs_random is None):
        print("solve: exactly one of --rhs/--rhs-random is required", file=sys.stderr)
        return 2
    t0 = time.perf_counter()
    h2, factors = storage.load_factors(args.factors)
    if args.rhs is not None:
        b = storage.load_vector(args.rhs)
        if b.size != h2.count:
            print(f"solve: rhs length {b.size} != N = {h2.count}", file=sys.stderr)
            return 2
    else:
        b = np.random.default_rng(args.rhs_random).standard_normal(h2.count)
    x = ulv_solve.solve(factors, b, mode=args.mode)
    storage.save_vector(x, args.out, fmt=args.format)
    # residual through the hierarchical operator, in tree order
    perm = h2.cloud.perm
    res = h2_build.h2_matvec(h2, x[perm]) - b[perm]
    print(json.dumps({
        "command": "solve", "mode": args.mode, "n": h2.count,
        "residual_rel": float(np.linalg.norm(res) / np.linalg.norm(b)),
        "seconds": time.perf_counter() - t0, "out": args.out}))
    return 0


def _write_csv(path, config_line, header, rows):
    with open(path, "w") as f:
        f.write(f"# {config_line} version={storage.FORMAT_VERSION}\n")
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(str(v) for v in row) + "\n")


def cmd_sweep(args):
    grid = [v for v in args.grid.split(",") if v]
    cfgstr = (f"kind={args.kind} shape={args.shape} kernel={args.kernel} "
              f"leaf={args.leaf} eta={args.eta} rank={args.rank} tol={args.tol} "
              f"sfar={args.sfar} snear={args.snear} gs={args.gs} seed={args.seed}")
    rows = []
    if args.kind == "n":
        if args.rank is None and args.tol is None:
            args.rank = 40
        leaf = args.leaf or 256
        header = ("N", "true_flops", "padded_flops", "seconds")
        for nstr in grid:
            n = int(nstr)
            t0 = time.perf_counter()
            cfg = h2_build.BuildConfig(eta=args.eta, leaf_max=leaf, rank=args.rank,
                                       tol=args.tol, s_far=args.sfar,
                                       s_near=args.snear, gs_sweeps=args.gs,
                                       seed=args.seed)
            *_, h2 = _pipeline(args.shape, n, args.seed, args.kernel, cfg)
            factors = ulv_factor.factorize(h2)
            rows.append((n, factors.flops["total_true"],
                         factors.flops["total_padded"],
                         time.perf_counter() - t0))
    elif args.kind == "rank":
        leaf = args.leaf or 512
        header = ("rank", "h2_error", "hss_error")
        n = args.n
        if n > args.cap:
            rows = [(int(r), "unavailable", "unavailable") for r in grid]
        else:
            gen = geometry.gen_sphere_surface if args.shape == "sphere" \
                else geometry.gen_uniform_cube
            cloud = gen(n, args.seed)
            tree = geometry.build_tree(cloud, leaf)
            kern = kernels.KernelSpec(family=args.kernel)
            a = oracle.dense_assemble(kern, cloud, cap=args.cap)
            rng = np.random.default_rng(args.seed + 1)
            x_true = rng.standard_normal(n)
            b_tree = a @ x_true
            b = np.zeros(n)
            b[cloud.perm] = b_tree  # back to input order for solve()
            x_user = np.zeros(n)
            x_user[cloud.perm] = x_true
            for rstr in grid:
                r = int(rstr)
                errs = []
                for eta in (args.eta, 0.0):
                    lists = geometry.build_interaction_lists(tree, eta)
                    cfg = h2_build.BuildConfig(eta=eta, leaf_max=leaf, rank=r,
                                               s_far=args.sfar, s_near=args.snear,
                                               gs_sweeps=args.gs, seed=args.seed)
                    h2 = h2_build.construct(kern, tree, lists, cfg, cloud)
                    factors = ulv_factor.factorize(h2)
                    x = ulv_solve.solve(factors, b)
                    errs.append(oracle.relative_error(x, x_user))
                rows.append((r, errs[0], errs[1]))
    else:  # eta sweep
        leaf = args.leaf or 64
        if args.rank is None and args.tol is None:
            args.rank = 30
        header = ("eta", "prefactor_flops", "factor_flops", "ratio")
        for estr in grid:
            eta = float(estr)
            cfg = h2_build.BuildConfig(eta=eta, leaf_max=leaf, rank=args.rank,
                                       tol=args.tol, s_far=args.sfar,
                                       s_near=args.snear, gs_sweeps=args.gs,
                                       seed=args.seed)
            *_, h2 = _pipeline(args.shape, args.n, args.seed, args.kernel, cfg)
            factors = ulv_factor.factorize(h2)
            cmp = oracle.flop_report_compare(h2.build_flops, factors.flops)
            rows.append((eta, cmp["prefactor_flops"], cmp["factor_flops"],
                         cmp["ratio"]))
    _write_csv(args.out, cfgstr, header, rows)
    print(json.dumps({"command": "sweep", "kind": args.kind,
                      "rows": len(rows), "out": args.out}))
    return 0


def cmd_simulate(args):
    p = args.procs
    h2 = storage.load_h2(args.h2)
    if p < 1 or p & (p - 1) or p > 2 ** h2.tree.depth:
        print(f"simulate: --procs must be a power of 2 no larger than the "
              f"leaf count {2 ** h2.tree.depth}", file=sys.stderr)
        return 2
    asg = comm_sim.assign(h2.tree, p)
    ranks = comm_sim.ranks_of(h2)
    traces = {"factor": comm_sim.simulate_factor(h2.tree, h2.lists, ranks, asg),
              "solve": comm_sim.simulate_solve(h2.tree, h2.lists, ranks, asg)}
    for phase, trace in traces.items():
        path = f"{args.out}.{phase}.csv"
        _write_csv(path, f"procs={p} phase={phase}",
                   ("phase", "level", "kind", "proc_lo", "proc_hi", "bytes"),
                   [(e.phase, e.level, e.kind, e.participants[0],
                     e.participants[1], e.bytes) for e in trace.events])
    summary = {"command": "simulate", "procs": p,
               "factor_events": traces["factor"].count(),
               "factor_bytes": traces["factor"].total_bytes(),
               "solve_events": traces["solve"].count(),
               "solve_bytes": traces["solve"].total_bytes(),
               "per_rank_solve_bytes": traces["solve"].per_process_bytes(p).tolist()}
    print(json.dumps(summary))
    return 0


def entry(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command == "build":
        args = _apply_config(parser._sub.choices["build"], args)
    handlers = {"gen": cmd_gen, "build": cmd_build, "factor": cmd_factor,
                "solve": cmd_solve, "sweep": cmd_sweep, "simulate": cmd_simulate}
    try:
        return handlers[args.command](args)
    except NotPositiveDefiniteError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except H2Error as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(entry())


if __name__ == "__main__":
    main()
