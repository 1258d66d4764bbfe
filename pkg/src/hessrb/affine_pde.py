"""Parametric diffusion problems ``-div(kappa(p) grad u) = g`` on the unit square.

Two concrete problems are provided:

* :func:`make_uniform_piecewise_problem`: ``kappa = kappa0 + sum_k k^-beta p_k``
  on a ``sqrt(K) x sqrt(K)`` checkerboard, ``p`` uniform on ``[-sqrt 3, sqrt 3]^K``,
  affine in ``p``.
* :func:`make_lognormal_problem`: ``kappa = exp(p)`` with ``p`` a nodal Gaussian
  field whose precision is ``A M^{-1} A``.

Degrees of freedom are mesh vertices. Dirichlet conditions are imposed by a
lift plus elimination: linear systems live on the free (unconstrained)
vertices, while state and adjoint vectors returned to callers are full length.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .linalg import NotPositiveDefiniteError, SparseCholesky
from .mesh_fem import (
    Mesh,
    assemble_mass,
    assemble_qoi_vector,
    assemble_stiffness,
    assemble_subdomain_stiffness,
    build_uniform_mesh,
    dirichlet_lift,
    load_vector,
)

QOI_REGION = ((0.0, 0.1), (0.0, 0.1))
UNIFORM_HALF_WIDTH = math.sqrt(3.0)


class IndefiniteOperatorError(ValueError):
    """The diffusion coefficient is nonpositive somewhere."""


class SingularSystemError(np.linalg.LinAlgError):
    """A high-fidelity system could not be factorized."""


@dataclass
class SolveCounter:
    """Tally of high-fidelity work, by kind."""

    factorizations: int = 0
    state: int = 0
    adjoint: int = 0
    incremental: int = 0
    hessian_actions: int = 0

    @property
    def linear_solves(self) -> int:
        return self.state + self.adjoint + self.incremental

    def as_dict(self) -> dict:
        return {
            "factorizations": self.factorizations,
            "state": self.state,
            "adjoint": self.adjoint,
            "incremental": self.incremental,
            "hessian_actions": self.hessian_actions,
        }

    def reset(self) -> None:
        self.factorizations = self.state = self.adjoint = 0
        self.incremental = self.hessian_actions = 0


@dataclass(frozen=True)
class AffineExpansion:
    """``A(p) = sum_q theta_a^q(p) A^q`` and ``f(p) = sum_q theta_f^q(p) f^q``.

    Terms are restricted to the free degrees of freedom of the owning problem.
    """

    operator_terms: tuple
    operator_coeffs: Callable[[np.ndarray], np.ndarray]
    rhs_terms: tuple
    rhs_coeffs: Callable[[np.ndarray], np.ndarray]

    @property
    def Q_a(self) -> int:
        return len(self.operator_terms)

    @property
    def Q_f(self) -> int:
        return len(self.rhs_terms)

    def theta(self, p):
        theta_a = np.asarray(self.operator_coeffs(p), dtype=float)
        theta_f = np.asarray(self.rhs_coeffs(p), dtype=float)
        if theta_a.shape != (self.Q_a,) or theta_f.shape != (self.Q_f,):
            raise ValueError("affine coefficient count does not match the terms")
        return theta_a, theta_f

    def assemble(self, p):
        theta_a, theta_f = self.theta(p)
        A = theta_a[0] * self.operator_terms[0]
        for t, Aq in zip(theta_a[1:], self.operator_terms[1:]):
            if t != 0.0:
                A = A + t * Aq
        f = np.zeros_like(self.rhs_terms[0])
        for t, fq in zip(theta_f, self.rhs_terms):
            if t != 0.0:
                f += t * fq
        return sp.csr_matrix(A), f


@dataclass
class ParameterDistribution:
    """Uniform box ``[-sqrt 3, sqrt 3]^K`` around ``mean`` or a Gaussian field.

    For ``kind == "gaussian"`` the precision is ``C^{-1} = A M^{-1} A`` with
    ``A = precision_stiffness`` and ``M = mass``. Samples are drawn as
    ``mean + A^{-1} S xi`` with ``M = S S^T`` so that their covariance is
    exactly ``C``; ``lumped_mass=True`` swaps ``S`` for the square root of the
    row-summed mass.
    """

    kind: str
    dimension: int
    mean: np.ndarray
    precision_stiffness: Optional[sp.spmatrix] = None
    mass: Optional[sp.spmatrix] = None
    lumped_mass: bool = False
    _A: Optional[SparseCholesky] = field(default=None, init=False, repr=False)
    _M: Optional[SparseCholesky] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("uniform", "gaussian"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        self.mean = np.asarray(self.mean, dtype=float)
        if self.mean.shape != (self.dimension,):
            raise ValueError("mean has the wrong dimension")
        if self.kind == "gaussian":
            if self.precision_stiffness is None or self.mass is None:
                raise ValueError("gaussian distribution needs stiffness and mass")
            self._A = SparseCholesky(self.precision_stiffness)
            self._M = SparseCholesky(self.mass)
            self._lumped = np.sqrt(np.asarray(self.mass.sum(axis=1)).ravel())

    @property
    def is_gaussian(self) -> bool:
        return self.kind == "gaussian"

    def precision_action(self, x: np.ndarray) -> np.ndarray:
        """``C^{-1} x``."""
        if not self.is_gaussian:
            return np.array(x, dtype=float)
        A = self.precision_stiffness
        return A @ self._M.solve(A @ x)

    def covariance_action(self, x: np.ndarray) -> np.ndarray:
        """``C x``."""
        if not self.is_gaussian:
            return np.array(x, dtype=float)
        return self._A.solve(self.mass @ self._A.solve(x))

    def precision_factor_action(self, x: np.ndarray) -> np.ndarray:
        """``F x`` for the factor ``F = S^{-1} A`` satisfying ``F^T F = C^{-1}``."""
        if not self.is_gaussian:
            return np.array(x, dtype=float)
        return self._M.factor_solve(self.precision_stiffness @ x)

    def sample(self, rng: np.random.Generator, n: Optional[int] = None) -> np.ndarray:
        """Draw one parameter (``n is None``) or an ``(n, K)`` array of them."""
        size = 1 if n is None else int(n)
        K = self.dimension
        if self.is_gaussian:
            xi = rng.standard_normal((K, size))
            if self.lumped_mass:
                colored = self._lumped[:, None] * xi
            else:
                colored = self._M.factor_matvec(xi)
            draws = (self._A.solve(colored)).T + self.mean
        else:
            draws = self.mean + rng.uniform(
                -UNIFORM_HALF_WIDTH, UNIFORM_HALF_WIDTH, size=(size, K)
            )
        return draws[0] if n is None else draws

    def in_support(self, p: np.ndarray) -> bool:
        if self.is_gaussian:
            return True
        return bool(np.all(np.abs(p - self.mean) <= UNIFORM_HALF_WIDTH * (1 + 1e-12)))


class PiecewiseCoefficient:
    """``kappa = kappa0 + w_k p_k`` on the cells of subdomain ``k``."""

    linear = True

    def __init__(self, kappa0: float, weights: np.ndarray, cell_subdomain: np.ndarray):
        self.kappa0 = float(kappa0)
        self.weights = np.asarray(weights, dtype=float)
        self.cell_subdomain = np.asarray(cell_subdomain, dtype=np.int64)
        self.dimension = self.weights.size

    def __call__(self, p):
        k = self.cell_subdomain
        return self.kappa0 + self.weights[k] * p[k]

    def jvp(self, p, dp):
        k = self.cell_subdomain
        return self.weights[k] * dp[k]

    def vjp(self, p, w):
        k = self.cell_subdomain
        return np.bincount(k, self.weights[k] * w, minlength=self.dimension)

    def second_vjp(self, p, dp, w):
        return np.zeros(self.dimension)


class NodalExpCoefficient:
    """``kappa = exp(p)`` evaluated at cell centroids of the P1 interpolant of ``p``."""

    linear = False

    def __init__(self, cells: np.ndarray, dimension: int):
        self.cells = np.asarray(cells, dtype=np.int64)
        self.dimension = int(dimension)

    def _mean(self, q):
        return q[self.cells].mean(axis=1)

    def __call__(self, p):
        return np.exp(self._mean(p))

    def jvp(self, p, dp):
        return np.exp(self._mean(p)) * self._mean(dp)

    def _scatter(self, cellwise):
        vals = np.repeat(cellwise[:, None] / 3.0, 3, axis=1)
        return np.bincount(self.cells.ravel(), vals.ravel(), minlength=self.dimension)

    def vjp(self, p, w):
        return self._scatter(np.exp(self._mean(p)) * w)

    def second_vjp(self, p, dp, w):
        return self._scatter(np.exp(self._mean(p)) * self._mean(dp) * w)


class ParametricProblem:
    """High-fidelity model ``A(p) u = f(p)`` with QoI ``s(u) = s_h . u``.

    Parameters
    ----------
    mesh : Mesh
    distribution : ParameterDistribution
    coefficient : PiecewiseCoefficient or NodalExpCoefficient
        Cellwise diffusion coefficient and its derivatives in ``p``.
    qoi_vector : ndarray
        Full-length QoI functional.
    lift, constrained : ndarray
        Dirichlet lift and the constrained vertex indices.
    source : float or ndarray
        Cellwise constant right-hand side ``g``.
    affine : AffineExpansion, optional
        When present, :meth:`assemble_at` uses it; otherwise the operator is
        assembled directly from the coefficient.
    """

    def __init__(
        self,
        mesh: Mesh,
        distribution: ParameterDistribution,
        coefficient,
        qoi_vector: np.ndarray,
        lift: np.ndarray,
        constrained: np.ndarray,
        source=0.0,
        affine: Optional[AffineExpansion] = None,
        name: str = "problem",
    ):
        self.mesh = mesh
        self.distribution = distribution
        self.coefficient = coefficient
        self.qoi_vector = np.asarray(qoi_vector, dtype=float)
        self.lift = np.asarray(lift, dtype=float)
        self.constrained = np.asarray(constrained, dtype=np.int64)
        self.free = np.setdiff1d(np.arange(mesh.num_vertices), self.constrained)
        self.source = source
        self.affine = affine
        self.name = name
        self.counter = SolveCounter()
        if self.qoi_vector.shape != (mesh.num_vertices,):
            raise ValueError("qoi vector does not match the mesh")
        if coefficient.dimension != distribution.dimension:
            raise ValueError("coefficient and distribution dimensions differ")

        self._area = mesh.signed_areas()
        self._grads = mesh.basis_gradients()
        self._local = self._area[:, None, None] * np.einsum(
            "cad,cbd->cab", self._grads, self._grads
        )
        self._load = load_vector(mesh, source)
        self._energy = assemble_stiffness(mesh, 1.0)

    # ------------------------------------------------------------------ basics
    @property
    def dimension(self) -> int:
        """Parameter dimension ``K``."""
        return self.distribution.dimension

    @property
    def num_free(self) -> int:
        return self.free.size

    @property
    def is_affine(self) -> bool:
        return self.affine is not None

    @property
    def lift_qoi(self) -> float:
        return float(self.qoi_vector @ self.lift)

    @property
    def energy_matrix(self) -> sp.csr_matrix:
        """Unit-coefficient stiffness on all vertices (H1 seminorm)."""
        return self._energy

    def energy_matrix_free(self) -> sp.csr_matrix:
        f = self.free
        return sp.csr_matrix(self._energy[f][:, f])

    def with_qoi(self, qoi_vector: np.ndarray) -> "ParametricProblem":
        """Same state equation, different QoI functional."""
        other = ParametricProblem.__new__(ParametricProblem)
        other.__dict__.update(self.__dict__)
        other.qoi_vector = np.asarray(qoi_vector, dtype=float)
        other.counter = SolveCounter()
        return other

    def embed(self, u_free: np.ndarray, with_lift: bool = True) -> np.ndarray:
        """Full-length vector from free components (columns allowed)."""
        u_free = np.asarray(u_free, dtype=float)
        shape = (self.mesh.num_vertices,) + u_free.shape[1:]
        out = np.zeros(shape)
        if with_lift:
            out += self.lift.reshape((-1,) + (1,) * (u_free.ndim - 1))
        out[self.free] += u_free
        return out

    # ---------------------------------------------------------------- assembly
    def coefficient_at(self, p) -> np.ndarray:
        p = self._check_parameter(p)
        kappa = self.coefficient(p)
        bad = np.flatnonzero(~(kappa > 0.0))
        if bad.size:
            c = int(bad[0])
            raise IndefiniteOperatorError(
                f"diffusion coefficient {kappa[c]:.6g} is not positive on cell {c}"
            )
        return kappa

    def _check_parameter(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if p.shape != (self.dimension,):
            raise ValueError(f"parameter must have shape ({self.dimension},), got {p.shape}")
        if not self.distribution.in_support(p):
            warnings.warn("parameter lies outside the distribution support", stacklevel=3)
        return p

    def assemble_direct(self, p):
        """Operator and right-hand side on free dofs from cellwise assembly."""
        kappa = self.coefficient_at(p)
        A = assemble_stiffness(self.mesh, kappa)
        f, c = self.free, self.constrained
        A_ff = sp.csr_matrix(A[f][:, f])
        rhs = self._load[f] - A[f][:, c] @ self.lift[c]
        return A_ff, rhs

    def assemble_at(self, p):
        if self.affine is None:
            return self.assemble_direct(p)
        kappa = self.coefficient_at(p)  # positivity check
        del kappa
        return self.affine.assemble(np.asarray(p, dtype=float))

    def factorize(self, p):
        A, f = self.assemble_at(p)
        try:
            chol = SparseCholesky(A)
        except NotPositiveDefiniteError as exc:
            raise SingularSystemError(f"factorization failed: {exc}") from exc
        self.counter.factorizations += 1
        return chol, A, f

    # ------------------------------------------------------------- cell forms
    def cell_energy(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """``int_c grad u . grad v`` for every cell ``c``."""
        gu = np.einsum("cad,ca->cd", self._grads, u[self.mesh.cells])
        gv = np.einsum("cad,ca->cd", self._grads, v[self.mesh.cells])
        return self._area * np.einsum("cd,cd->c", gu, gv)

    def stiffness_matvec(self, cell_coefficient: np.ndarray, u: np.ndarray) -> np.ndarray:
        """``A[kappa] u`` on all vertices without forming the matrix."""
        loc = np.einsum("cab,cb->ca", self._local, u[self.mesh.cells])
        loc *= cell_coefficient[:, None]
        return np.bincount(
            self.mesh.cells.ravel(), loc.ravel(), minlength=self.mesh.num_vertices
        )

    # ------------------------------------------------------------------- solves
    def solve_state(self, p, factor=None) -> np.ndarray:
        chol, _, f = factor if factor is not None else self.factorize(p)
        self.counter.state += 1
        return self.embed(chol.solve(f))

    def solve_adjoint(self, p, factor=None) -> np.ndarray:
        chol = (factor if factor is not None else self.factorize(p))[0]
        self.counter.adjoint += 1
        return self.embed(chol.solve(self.qoi_vector[self.free]), with_lift=False)

    def eval_qoi(self, u: np.ndarray) -> float:
        u = np.asarray(u, dtype=float)
        if u.shape[0] != self.qoi_vector.size:
            raise ValueError("state vector does not match the QoI vector")
        return float(self.qoi_vector @ u)

    def qoi(self, p) -> float:
        return self.eval_qoi(self.solve_state(p))


# Module-level operations mirror the problem methods.
def assemble_at(problem: ParametricProblem, p):
    return problem.assemble_at(p)


def solve_state(problem: ParametricProblem, p) -> np.ndarray:
    return problem.solve_state(p)


def solve_adjoint(problem: ParametricProblem, p) -> np.ndarray:
    return problem.solve_adjoint(p)


def eval_qoi(problem: ParametricProblem, u: np.ndarray) -> float:
    return problem.eval_qoi(u)


def sample_parameter(distribution: ParameterDistribution, rng) -> np.ndarray:
    return distribution.sample(np.random.default_rng(rng))


# ------------------------------------------------------------------ factories
def checkerboard_cells(mesh: Mesh, K: int) -> np.ndarray:
    """Subdomain index of each cell for a ``sqrt(K) x sqrt(K)`` partition.

    Subdomain ``k`` (zero based) covers ``x in [i h, (i+1) h]``,
    ``y in [j h, (j+1) h]`` with ``i = k % sqrt(K)``, ``j = k // sqrt(K)`` and
    ``h = 1 / sqrt(K)``, i.e. the same x-fastest ordering as the mesh vertices.
    """
    side = math.isqrt(K)
    if side * side != K:
        raise ValueError(f"K={K} is not a perfect square")
    if (mesh.n_per_side - 1) % side:
        raise ValueError(
            f"mesh with {mesh.n_per_side} vertices per side cannot be split "
            f"into {side} x {side} equal squares"
        )
    cen = mesh.centroids()
    i = np.minimum((cen[:, 0] * side).astype(np.int64), side - 1)
    j = np.minimum((cen[:, 1] * side).astype(np.int64), side - 1)
    return j * side + i


def make_uniform_piecewise_problem(
    n_per_side: int, K: int, kappa0: float, beta: float, region=QOI_REGION
) -> ParametricProblem:
    """Piecewise-constant coefficient with ``u = 1`` at the bottom, ``u = 0`` at the top."""
    mesh = build_uniform_mesh(n_per_side)
    cell_sub = checkerboard_cells(mesh, K)
    weights = np.arange(1, K + 1, dtype=float) ** (-float(beta))
    if not kappa0 > UNIFORM_HALF_WIDTH * weights.max():
        raise IndefiniteOperatorError(
            f"kappa0={kappa0} does not keep the coefficient positive "
            f"(needs > {UNIFORM_HALF_WIDTH * weights.max():.6g})"
        )
    lift, constrained = dirichlet_lift(mesh, {"bottom": 1.0, "top": 0.0})
    free = np.setdiff1d(np.arange(mesh.num_vertices), constrained)

    full_terms = [assemble_stiffness(mesh, 1.0)]
    full_terms += [assemble_subdomain_stiffness(mesh, np.flatnonzero(cell_sub == k)) for k in range(K)]
    op_terms = tuple(sp.csr_matrix(A[free][:, free]) for A in full_terms)
    rhs_terms = tuple(-(A[free][:, constrained] @ lift[constrained]) for A in full_terms)

    def theta(p):
        return np.concatenate([[kappa0], weights * np.asarray(p, dtype=float)])

    affine = AffineExpansion(op_terms, theta, rhs_terms, theta)
    dist = ParameterDistribution("uniform", K, np.zeros(K))
    return ParametricProblem(
        mesh,
        dist,
        PiecewiseCoefficient(kappa0, weights, cell_sub),
        assemble_qoi_vector(mesh, region),
        lift,
        constrained,
        source=0.0,
        affine=affine,
        name="uniform",
    )


def make_lognormal_problem(
    n_per_side: int,
    gamma: float = 0.5,
    delta: float = 1.0,
    alpha: int = 2,
    region=QOI_REGION,
    lumped_mass: bool = False,
) -> ParametricProblem:
    """Log-normal coefficient, unit source, homogeneous Dirichlet data on the boundary."""
    if alpha != 2:
        raise NotImplementedError(f"only alpha=2 is supported, got {alpha}")
    if not (gamma > 0 and delta > 0):
        raise ValueError("gamma and delta must be positive")
    mesh = build_uniform_mesh(n_per_side)
    M = assemble_mass(mesh)
    A_prec = sp.csr_matrix(delta * assemble_stiffness(mesh, 1.0) + gamma * M)
    K = mesh.num_vertices
    dist = ParameterDistribution("gaussian", K, np.zeros(K), A_prec, M, lumped_mass)
    lift, constrained = dirichlet_lift(
        mesh, {"bottom": 0.0, "top": 0.0, "left": 0.0, "right": 0.0}
    )
    return ParametricProblem(
        mesh,
        dist,
        NodalExpCoefficient(mesh.cells, K),
        assemble_qoi_vector(mesh, region),
        lift,
        constrained,
        source=1.0,
        affine=None,
        name="lognormal",
    )
