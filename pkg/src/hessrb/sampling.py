"""Training-set generation from Hessian-informed parameter subspaces."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .adjoints import AveragedHessian, full_hessian, hessian_operator
from .affine_pde import ParameterDistribution, ParametricProblem
from .eigensolvers import GeneralizedEigenPairs, dense_gevp, fix_signs, randomized_gevp
from .linalg import apply_columns

log = logging.getLogger(__name__)

MODES = ("project-full-sample", "gaussian-direct")


@dataclass
class SubspaceSampler:
    """Samples ``p_L = mean + Phi_L w`` from the span of ``C^{-1}``-orthonormal columns."""

    basis: np.ndarray
    distribution: ParameterDistribution
    mode: str = "project-full-sample"
    eigenvalues: Optional[np.ndarray] = None
    deficient: bool = False
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.basis = np.atleast_2d(np.asarray(self.basis, dtype=float))
        if self.mode not in MODES:
            raise ValueError(f"unknown sampler mode {self.mode!r}")
        if self.mode == "gaussian-direct" and not self.distribution.is_gaussian:
            raise ValueError("gaussian-direct sampling needs a gaussian distribution")
        if self.basis.shape[0] != self.distribution.dimension:
            raise ValueError("basis rows do not match the parameter dimension")

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    @property
    def dimension(self) -> int:
        return self.basis.shape[0]

    def gram(self) -> np.ndarray:
        """``Phi^T C^{-1} Phi`` (identity for a valid sampler)."""
        return self.basis.T @ apply_columns(self.distribution.precision_action, self.basis)

    def coordinates(self, p) -> np.ndarray:
        """``Phi^T C^{-1} (p - mean)``; rows of ``p`` may be stacked."""
        d = np.atleast_2d(p) - self.distribution.mean
        w = apply_columns(self.distribution.precision_action, d.T)
        return (self.basis.T @ w).T

    def project(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        out = self.distribution.mean + self.coordinates(p) @ self.basis.T
        return out[0] if p.ndim == 1 else out

    def draw(self, n: int, seed=None) -> np.ndarray:
        if n < 1:
            raise ValueError("need at least one training sample")
        rng = np.random.default_rng(seed)
        if self.mode == "gaussian-direct":
            omega = rng.standard_normal((n, self.rank))
            return self.distribution.mean + omega @ self.basis.T
        return self.project(self.distribution.sample(rng, n))


def project_to_subspace(sampler: SubspaceSampler, p) -> np.ndarray:
    return sampler.project(p)


def draw_training_set(sampler: SubspaceSampler, n: int, seed=None) -> np.ndarray:
    return sampler.draw(n, seed)


def draw_random_set(distribution: ParameterDistribution, n: int, seed=None) -> np.ndarray:
    """Plain i.i.d. draws from the parameter distribution."""
    return distribution.sample(np.random.default_rng(seed), n)


def _default_mode(distribution) -> str:
    return "gaussian-direct" if distribution.is_gaussian else "project-full-sample"


def _eigenpairs(problem, H_action, L, c, seed, method) -> GeneralizedEigenPairs:
    dist = problem.distribution
    K = problem.dimension
    if method == "dense":
        H = np.column_stack([H_action(e) for e in np.eye(K)])
        Cinv = apply_columns(dist.precision_action, np.eye(K))
        return dense_gevp(0.5 * (H + H.T), Cinv, L)
    return randomized_gevp(
        H_action, dist.covariance_action, dist.precision_action, K, L, c, seed
    )


def _check_rank(problem, L, c, method):
    if L < 1:
        raise ValueError("subspace rank L must be at least 1")
    if method == "randomized" and L + c > problem.dimension:
        raise ValueError(f"L + c = {L + c} exceeds the parameter dimension")
    if method not in ("randomized", "dense"):
        raise ValueError(f"unknown eigensolver method {method!r}")


def local_eigenpairs(
    problem: ParametricProblem, L: int, c: int = 10, seed=None, method="randomized", at=None
) -> GeneralizedEigenPairs:
    """Generalized eigenpairs of the Hessian at ``at`` (default: the mean)."""
    _check_rank(problem, L, c, method)
    anchor = problem.distribution.mean if at is None else np.asarray(at, dtype=float)
    if method == "dense":
        H = full_hessian(problem, anchor)
        Cinv = apply_columns(problem.distribution.precision_action, np.eye(problem.dimension))
        return dense_gevp(H, Cinv, L)
    op = hessian_operator(problem, anchor)
    return _eigenpairs(problem, op.matvec, L, c, seed, method)


def build_local_subspace(
    problem: ParametricProblem, L: int, c: int = 10, seed=None, method="randomized"
) -> SubspaceSampler:
    pairs = local_eigenpairs(problem, L, c, seed, method)
    dist = problem.distribution
    return SubspaceSampler(
        pairs.eigenvectors,
        dist,
        _default_mode(dist),
        eigenvalues=pairs.eigenvalues,
        deficient=pairs.rank_deficient,
        info={"builder": "local", "hessian_actions": pairs.hessian_actions},
    )


def build_averaged_subspace(
    problem: ParametricProblem,
    M: int,
    L: int,
    c: int = 10,
    seed=None,
    samples: Optional[Sequence[np.ndarray]] = None,
    method="randomized",
) -> SubspaceSampler:
    """Subspace of the sample-averaged Hessian ``(1/M) sum_m H_{p^m}``."""
    _check_rank(problem, L, c, method)
    if samples is None:
        if M < 1:
            raise ValueError("M must be at least 1")
        samples = draw_random_set(problem.distribution, M, _sample_seed(seed))
    avg = AveragedHessian(problem, samples)
    pairs = _eigenpairs(problem, avg.matvec, L, c, seed, method)
    dist = problem.distribution
    return SubspaceSampler(
        pairs.eigenvectors,
        dist,
        _default_mode(dist),
        eigenvalues=pairs.eigenvalues,
        deficient=pairs.rank_deficient,
        info={"builder": "averaged", "M": len(avg.operators)},
    )


def _sample_seed(seed):
    # sample locations use their own stream, distinct from the eigensolver probes
    return np.random.SeedSequence(seed).spawn(1)[0] if seed is not None else None


def compress_weighted_eigenvectors(distribution, blocks, L: int):
    """Combine eigenvector blocks weighted by ``sqrt|lambda|`` and compress by SVD.

    ``blocks`` is a sequence of :class:`GeneralizedEigenPairs`. With ``F`` the
    precision factor (``F^T F = C^{-1}``) and ``F Phi = P Sigma Q^T``, the
    returned columns are ``Phi q_k / sigma_k``, which are ``C^{-1}``-orthonormal.
    Returns ``(basis, singular_values, deficient)``.
    """
    Phi = np.column_stack(
        [b.eigenvectors * np.sqrt(np.abs(b.eigenvalues)) for b in blocks]
    )
    if Phi.shape[1] < L:
        raise ValueError(f"only {Phi.shape[1]} eigenvectors for {L} output modes")
    FPhi = apply_columns(distribution.precision_factor_action, Phi)
    _, sigma, Qt = np.linalg.svd(FPhi, full_matrices=False)
    tol = sigma[0] * max(FPhi.shape) * np.finfo(float).eps if sigma.size else 0.0
    usable = int(np.count_nonzero(sigma > tol))
    deficient = usable < L
    keep = min(L, usable)
    basis = fix_signs(Phi @ (Qt[:keep].T / sigma[:keep]))
    return basis, sigma[:keep], deficient


def build_combined_subspace(
    problem: ParametricProblem,
    M: int,
    per_sample_L,
    L: int,
    c: int = 10,
    seed=None,
    samples: Optional[Sequence[np.ndarray]] = None,
    method="randomized",
) -> SubspaceSampler:
    """Combine per-sample local eigenvectors into one ``L``-dimensional subspace."""
    if samples is None:
        if M < 1:
            raise ValueError("M must be at least 1")
        samples = draw_random_set(problem.distribution, M, _sample_seed(seed))
    samples = list(samples)
    if np.isscalar(per_sample_L):
        per_sample_L = [int(per_sample_L)] * len(samples)
    if len(per_sample_L) != len(samples):
        raise ValueError("per_sample_L needs one entry per sample")
    if sum(per_sample_L) < L:
        raise ValueError("sum of per-sample ranks is smaller than L")
    blocks = []
    for m, (p, Lm) in enumerate(zip(samples, per_sample_L)):
        s = None if seed is None else seed + m
        blocks.append(local_eigenpairs(problem, Lm, c, s, method, at=p))
    basis, sigma, deficient = compress_weighted_eigenvectors(problem.distribution, blocks, L)
    dist = problem.distribution
    return SubspaceSampler(
        basis,
        dist,
        _default_mode(dist),
        eigenvalues=sigma**2,
        deficient=deficient,
        info={"builder": "combined", "M": len(samples), "singular_values": sigma},
    )


def build_multi_qoi_subspace(
    problem: ParametricProblem,
    qoi_vectors: Sequence[np.ndarray],
    strategy: str,
    L: int,
    c: int = 10,
    seed=None,
    samples: Optional[Sequence[np.ndarray]] = None,
    method="randomized",
    per_qoi_L: Optional[int] = None,
) -> SubspaceSampler:
    """One subspace for several QoIs sharing the state equation of ``problem``.

    ``strategy="averaged"`` diagonalizes ``(1/J) sum_j H^j`` (averaged over
    ``samples`` as well when given, else taken at the mean).
    ``strategy="concat-svd"`` computes ``per_qoi_L`` (default ``L``) local
    eigenpairs per QoI and compresses the weighted concatenation to ``L`` modes.
    """
    qoi_vectors = list(qoi_vectors)
    if not qoi_vectors:
        raise ValueError("need at least one QoI")
    _check_rank(problem, L, c, method)
    dist = problem.distribution
    subproblems = [problem.with_qoi(s) for s in qoi_vectors]
    anchors = [dist.mean] if samples is None else list(samples)

    if strategy == "averaged":
        ops = [hessian_operator(sp_, a) for sp_ in subproblems for a in anchors]

        def action(dp):
            out = ops[0].matvec(dp)
            for op in ops[1:]:
                out = out + op.matvec(dp)
            return out / len(ops)

        pairs = _eigenpairs(problem, action, L, c, seed, method)
        basis, values, deficient = pairs.eigenvectors, pairs.eigenvalues, pairs.rank_deficient
    elif strategy == "concat-svd":
        Lj = L if per_qoi_L is None else int(per_qoi_L)
        _check_rank(problem, Lj, c, method)
        blocks = []
        for sp_ in subproblems:
            for m, a in enumerate(anchors):
                s = None if seed is None else seed + m
                blocks.append(local_eigenpairs(sp_, Lj, c, s, method, at=a))
        basis, sigma, deficient = compress_weighted_eigenvectors(dist, blocks, L)
        values = sigma**2
    else:
        raise ValueError(f"unknown multi-QoI strategy {strategy!r}")
    return SubspaceSampler(
        basis,
        dist,
        _default_mode(dist),
        eigenvalues=values,
        deficient=deficient,
        info={"builder": f"multi-qoi/{strategy}", "J": len(qoi_vectors)},
    )
