"""Hierarchical-matrix ULV Cholesky direct solver for kernel matrices."""

from . import comm_sim, dense_core, geometry, h2_build, kernels, oracle, storage, ulv_factor, ulv_solve
from .errors import (CoincidentPointsError, H2Error, NotPositiveDefiniteError,
                     OracleCapError, PointFormatError, SingularTriangularError,
                     StructureError)
from .geometry import (build_interaction_lists, build_tree, gen_sphere_surface,
                       gen_uniform_cube, load_points, save_points)
from .h2_build import BuildConfig, H2Matrix, construct, h2_matvec
from .kernels import KernelSpec
from .ulv_factor import ULVFactors, factorize
from .ulv_solve import solve

__version__ = "0.1.0"
