"""Round-trip tests for the manifest + binary block container."""

import numpy as np
import pytest

from h2ulv.errors import PointFormatError
from h2ulv.geometry import build_interaction_lists, build_tree, gen_sphere_surface
from h2ulv.h2_build import BuildConfig, construct, h2_matvec
from h2ulv.kernels import KernelSpec
from h2ulv.storage import load_factors, load_h2, load_vector, save_h2, save_ulv, save_vector
from h2ulv.ulv_factor import factorize
from h2ulv.ulv_solve import solve


def _build(n=512, leaf=64, eta=1.0, rank=16):
    k = KernelSpec(family="laplace")
    cloud = gen_sphere_surface(n, seed=0)
    tree = build_tree(cloud, leaf)
    lists = build_interaction_lists(tree, eta)
    return construct(k, tree, lists, BuildConfig(eta=eta, leaf_max=leaf, rank=rank), cloud)


class TestH2RoundTrip:
    def test_bit_exact_blocks_and_bases(self, tmp_path):
        h2 = _build()
        save_h2(h2, tmp_path)
        back = load_h2(tmp_path)
        assert back.count == h2.count
        assert back.tree.depth == h2.tree.depth
        assert np.array_equal(back.cloud.points, h2.cloud.points)
        assert np.array_equal(back.cloud.perm, h2.cloud.perm)
        assert back.lists.near == h2.lists.near
        assert back.lists.far == h2.lists.far
        assert set(back.bases) == set(h2.bases)
        for key in h2.bases:
            a, b = h2.bases[key], back.bases[key]
            assert a.rank == b.rank
            assert np.array_equal(a.q_skel, b.q_skel)
            assert np.array_equal(a.q_red, b.q_red)
            assert np.array_equal(a.frame, b.frame)
            assert np.array_equal(a.skeleton, b.skeleton)
        for key in h2.near_blocks:
            assert np.array_equal(back.near_blocks[key], h2.near_blocks[key])
        for key in h2.couplings:
            assert np.array_equal(back.couplings[key], h2.couplings[key])
        for key in h2.eff_points:
            assert np.array_equal(back.eff_points[key], h2.eff_points[key])

    def test_matvec_identical_after_reload(self, tmp_path):
        h2 = _build()
        save_h2(h2, tmp_path)
        back = load_h2(tmp_path)
        rng = np.random.default_rng(1)
        x = rng.standard_normal(h2.count)
        assert np.array_equal(h2_matvec(back, x), h2_matvec(h2, x))

    def test_kernel_and_config_preserved(self, tmp_path):
        h2 = _build()
        save_h2(h2, tmp_path)
        back = load_h2(tmp_path)
        assert back.kernel.family == "laplace"
        assert back.kernel.diagonal_shift == h2.kernel.diagonal_shift
        assert back.config.eta == h2.config.eta
        assert back.config.rank == h2.config.rank
        assert back.config.tol == h2.config.tol


class TestULVRoundTrip:
    def test_bit_exact_factors(self, tmp_path):
        h2 = _build()
        factors = factorize(h2)
        save_h2(h2, tmp_path)
        save_ulv(factors, tmp_path)
        _, back = load_factors(tmp_path)
        assert set(back.levels) == set(factors.levels)
        for l, lvl in factors.levels.items():
            blv = back.levels[l]
            assert blv.dims == lvl.dims
            for i in lvl.lr_diag:
                assert np.array_equal(blv.lr_diag[i], lvl.lr_diag[i])
            for key in lvl.lr_off:
                assert np.array_equal(blv.lr_off[key], lvl.lr_off[key])
            for key in lvl.ls:
                assert np.array_equal(blv.ls[key], lvl.ls[key])
            for i in lvl.v:
                assert np.array_equal(blv.v[i], lvl.v[i])
        assert np.array_equal(back.root, factors.root)
        assert back.flops["total_true"] == factors.flops["total_true"]

    def test_solve_identical_after_reload(self, tmp_path):
        h2 = _build()
        factors = factorize(h2)
        save_h2(h2, tmp_path)
        save_ulv(factors, tmp_path)
        _, back = load_factors(tmp_path)
        rng = np.random.default_rng(2)
        b = rng.standard_normal(h2.count)
        assert np.array_equal(solve(back, b), solve(factors, b))

    def test_load_factors_requires_factor_section(self, tmp_path):
        h2 = _build()
        save_h2(h2, tmp_path)
        with pytest.raises(ValueError):
            load_factors(tmp_path)


class TestVectorFiles:
    def test_csv_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        v = rng.standard_normal(100)
        path = tmp_path / "v.csv"
        save_vector(v, path, fmt="csv")
        assert np.array_equal(load_vector(path), v)

    def test_bin_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(4)
        v = rng.standard_normal(100)
        path = tmp_path / "v.bin"
        save_vector(v, path, fmt="bin")
        assert np.array_equal(load_vector(path), v)

    def test_unknown_format_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            save_vector(np.zeros(3), tmp_path / "v.x", fmt="hdf5")

    def test_truncated_binary_rejected(self, tmp_path):
        path = tmp_path / "v.bin"
        save_vector(np.arange(8.0), path, fmt="bin")
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(PointFormatError):
            load_vector(path)

    def test_malformed_csv_rejected(self, tmp_path):
        path = tmp_path / "v.csv"
        path.write_text("1.0\nnot-a-number\n")
        with pytest.raises(PointFormatError):
            load_vector(path)
