"""Hessian-based sampling for goal-oriented reduced-basis models of parametric diffusion."""

from .adjoints import AveragedHessian, HessianOperator, full_hessian, gradient, hessian_action
from .affine_pde import (
    IndefiniteOperatorError,
    ParameterDistribution,
    ParametricProblem,
    make_lognormal_problem,
    make_uniform_piecewise_problem,
)
from .eigensolvers import GeneralizedEigenPairs, dense_gevp, randomized_gevp
from .mesh_fem import Mesh, build_uniform_mesh
from .rom import ReducedModel, collect_snapshots, greedy_construct, pod_construct
from .sampling import (
    SubspaceSampler,
    build_averaged_subspace,
    build_combined_subspace,
    build_local_subspace,
    build_multi_qoi_subspace,
)

__version__ = "0.1.0"
