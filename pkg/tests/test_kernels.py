"""Tests for kernel entry evaluation and block generation."""

import numpy as np
import pytest

from h2ulv.errors import CoincidentPointsError
from h2ulv.geometry import PointCloud, gen_sphere_surface
from h2ulv.kernels import KernelSpec, eval_entry, gen_block


def _cloud(points):
    pts = np.asarray(points, dtype=np.float64)
    return PointCloud(points=pts, perm=np.arange(len(pts)))


class TestEvalEntry:
    def test_diagonal_is_shift(self):
        k = KernelSpec(family="laplace")
        p = np.array([0.3, 0.1, -0.2])
        assert eval_entry(k, 4, 4, p, p) == 1000.0

    def test_laplace_inverse_distance(self):
        k = KernelSpec(family="laplace")
        a = np.array([0.0, 0.0, 0.0])
        b = np.array([2.0, 0.0, 0.0])
        assert eval_entry(k, 0, 1, a, b) == pytest.approx(0.5, abs=1e-15)

    def test_yukawa_at_unit_distance(self):
        k = KernelSpec(family="yukawa")
        a = np.array([0.0, 0.0, 0.0])
        b = np.array([0.0, 1.0, 0.0])
        assert eval_entry(k, 0, 1, a, b) == pytest.approx(0.36787944117, abs=1e-10)

    def test_yukawa_decay_parameter(self):
        k = KernelSpec(family="yukawa", yukawa_decay=3.0)
        a = np.array([0.0, 0.0, 0.0])
        b = np.array([0.0, 0.0, 2.0])
        assert eval_entry(k, 0, 1, a, b) == pytest.approx(np.exp(-6.0) / 2.0, rel=1e-12)

    def test_unknown_family_rejected(self):
        with pytest.raises(ValueError):
            KernelSpec(family="gaussian")


class TestGenBlock:
    def test_single_diagonal_entry(self):
        k = KernelSpec(family="laplace")
        cloud = _cloud([[0.1, 0.2, 0.3]])
        blk = gen_block(k, np.array([0]), np.array([0]), cloud)
        assert blk.shape == (1, 1)
        assert blk[0, 0] == 1000.0

    def test_two_points_at_unit_distance(self):
        k = KernelSpec(family="laplace")
        cloud = _cloud([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        idx = np.array([0, 1])
        blk = gen_block(k, idx, idx, cloud)
        assert np.array_equal(blk, [[1000.0, 1.0], [1.0, 1000.0]])

    @pytest.mark.parametrize("family", ["laplace", "yukawa"])
    def test_symmetric(self, family):
        k = KernelSpec(family=family)
        cloud = gen_sphere_surface(50, seed=0)
        idx = np.arange(50)
        blk = gen_block(k, idx, idx, cloud)
        assert np.array_equal(blk, blk.T)

    def test_matches_entrywise_evaluation(self):
        k = KernelSpec(family="yukawa", yukawa_decay=2.0)
        cloud = gen_sphere_surface(12, seed=1)
        rows = np.array([0, 3, 7])
        cols = np.array([1, 3, 5, 9])
        blk = gen_block(k, rows, cols, cloud)
        for a, i in enumerate(rows):
            for b, j in enumerate(cols):
                want = eval_entry(k, i, j, cloud.points[i], cloud.points[j])
                assert blk[a, b] == pytest.approx(want, rel=1e-14)

    def test_coincident_offdiagonal_points_rejected(self):
        k = KernelSpec(family="laplace")
        cloud = _cloud([[0.5, 0.5, 0.5], [0.5, 0.5, 0.5]])
        with pytest.raises(CoincidentPointsError):
            gen_block(k, np.array([0]), np.array([1]), cloud)

    def test_rectangular_block_shape(self):
        k = KernelSpec(family="laplace")
        cloud = gen_sphere_surface(20, seed=2)
        blk = gen_block(k, np.arange(5), np.arange(5, 20), cloud)
        assert blk.shape == (5, 15)
        assert np.all(blk > 0)
