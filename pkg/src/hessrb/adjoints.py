"""Adjoint-based gradient and Hessian actions of the QoI with respect to ``p``.

With the state ``u`` (lift included) and the adjoint ``v`` solving
``a(w, v; p) = s(w)``, the diffusion form ``a(u, v; p) = sum_c kappa_c(p) e_c(u, v)``
with ``e_c(u, v) = int_c grad u . grad v`` gives

* gradient ``g = -J^T e(u, v)`` with ``J = d kappa / d p``;
* Hessian action ``H dp = -J^T [e(u_inc, v) + e(u, v_inc)] - (d^2 kappa dp)^T e(u, v)``

where ``u_inc``, ``v_inc`` solve the incremental state and adjoint problems
driven by ``-(dA dp) u`` and ``-(dA dp) v``. The Dirichlet lift enters only
through ``u`` so the right-hand side carries no separate ``p`` dependence.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .affine_pde import ParametricProblem

DENSE_HESSIAN_LIMIT = 4096


class HessianOperator:
    """Hessian of the QoI at a fixed anchor parameter.

    Construction performs one factorization, one state and one adjoint solve.
    Each :meth:`matvec` costs two further solves with the same factorization.
    """

    def __init__(self, problem: ParametricProblem, p):
        self.problem = problem
        self.p = np.array(p, dtype=float)
        self._factor = problem.factorize(self.p)
        self.u = problem.solve_state(self.p, self._factor)
        self.v = problem.solve_adjoint(self.p, self._factor)
        self._e_uv = problem.cell_energy(self.u, self.v)

    @property
    def dimension(self) -> int:
        return self.problem.dimension

    @property
    def counter(self):
        return self.problem.counter

    def qoi(self) -> float:
        return self.problem.eval_qoi(self.u)

    def gradient(self) -> np.ndarray:
        return -self.problem.coefficient.vjp(self.p, self._e_uv)

    def _incremental(self, dkappa: np.ndarray, w: np.ndarray) -> np.ndarray:
        pb = self.problem
        rhs = -pb.stiffness_matvec(dkappa, w)[pb.free]
        pb.counter.incremental += 1
        return pb.embed(self._factor[0].solve(rhs), with_lift=False)

    def matvec(self, dp) -> np.ndarray:
        """Hessian action ``H dp``."""
        pb = self.problem
        coef = pb.coefficient
        dp = np.asarray(dp, dtype=float)
        pb.counter.hessian_actions += 1
        dkappa = coef.jvp(self.p, dp)
        u_inc = self._incremental(dkappa, self.u)
        v_inc = self._incremental(dkappa, self.v)
        e = pb.cell_energy(u_inc, self.v) + pb.cell_energy(self.u, v_inc)
        out = -coef.vjp(self.p, e)
        if not coef.linear:
            out -= coef.second_vjp(self.p, dp, self._e_uv)
        return out

    __call__ = matvec


class QuadraticQoI:
    """Stand-in problem with ``s(p) = 0.5 p^T H p + g^T p`` for a given dense ``H``.

    Lets dense and randomized Hessian paths run on small closed-form examples.
    """

    def __init__(self, hessian, gradient=None):
        self.hessian = np.asarray(hessian, dtype=float)
        K = self.hessian.shape[0]
        self.g = np.zeros(K) if gradient is None else np.asarray(gradient, dtype=float)
        self.dimension = K

    def qoi(self, p):
        p = np.asarray(p, dtype=float)
        return float(0.5 * p @ self.hessian @ p + self.g @ p)

    def hessian_operator(self, p):
        return _DenseHessian(self.hessian, self.hessian @ np.asarray(p, float) + self.g)


class _DenseHessian:
    def __init__(self, H, grad):
        self.H = H
        self._grad = grad
        self.dimension = H.shape[0]

    def gradient(self):
        return self._grad

    def matvec(self, dp):
        return self.H @ np.asarray(dp, dtype=float)

    __call__ = matvec


def hessian_operator(problem, p):
    if isinstance(problem, QuadraticQoI):
        return problem.hessian_operator(p)
    return HessianOperator(problem, p)


def gradient(problem, p) -> np.ndarray:
    return hessian_operator(problem, p).gradient()


def hessian_action(op: HessianOperator, dp) -> np.ndarray:
    return op.matvec(dp)


def full_hessian(problem, p, return_asymmetry: bool = False):
    """Dense ``K x K`` Hessian from ``K`` unit-direction actions, symmetrized."""
    K = problem.dimension
    if K > DENSE_HESSIAN_LIMIT:
        raise ValueError(
            f"K={K} exceeds the dense Hessian limit {DENSE_HESSIAN_LIMIT}; "
            "use the randomized eigensolver with Hessian actions instead"
        )
    op = hessian_operator(problem, p)
    H = np.empty((K, K))
    e = np.zeros(K)
    for k in range(K):
        e[k] = 1.0
        H[:, k] = op.matvec(e)
        e[k] = 0.0
    asym = np.linalg.norm(H - H.T) / max(np.linalg.norm(H), np.finfo(float).tiny)
    H = 0.5 * (H + H.T)
    return (H, asym) if return_asymmetry else H


class AveragedHessian:
    """``(1/M) sum_m H_{p^m}`` with one cached :class:`HessianOperator` per sample."""

    def __init__(self, problem, samples: Sequence[np.ndarray]):
        samples = list(samples)
        if not samples:
            raise ValueError("averaged Hessian needs at least one sample")
        self.operators = [hessian_operator(problem, p) for p in samples]
        self.dimension = problem.dimension

    def matvec(self, dp) -> np.ndarray:
        out = self.operators[0].matvec(dp)
        for op in self.operators[1:]:
            out = out + op.matvec(dp)
        return out / len(self.operators)

    __call__ = matvec


def averaged_hessian_action(problem, samples, dp) -> np.ndarray:
    return AveragedHessian(problem, samples).matvec(dp)
