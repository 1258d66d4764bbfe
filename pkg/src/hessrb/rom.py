"""Reduced-basis spaces and the online reduced model.

Snapshots and bases live on the free degrees of freedom and are homogenized
(the Dirichlet lift is subtracted), so the reduced space is linear. The lift
re-enters through a constant QoI offset and in reconstruction.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .affine_pde import ParametricProblem
from .linalg import SparseCholesky
from .textio import read_vectors, write_vectors

log = logging.getLogger(__name__)

GRAM_SVD_THRESHOLD = 2000
_CHUNK = 128


@dataclass
class Snapshots:
    """Homogenized high-fidelity solutions, one column per training parameter."""

    problem: ParametricProblem
    parameters: np.ndarray
    matrix: np.ndarray
    skipped: list = field(default_factory=list)

    @property
    def count(self) -> int:
        return self.matrix.shape[1]


def collect_snapshots(problem: ParametricProblem, parameters) -> Snapshots:
    params = np.atleast_2d(np.asarray(parameters, dtype=float))
    cols, kept, skipped = [], [], []
    for i, p in enumerate(params):
        try:
            u = problem.solve_state(p)
        except (ValueError, np.linalg.LinAlgError) as exc:
            warnings.warn(f"snapshot {i} skipped: {exc}", stacklevel=2)
            skipped.append(i)
            continue
        cols.append(u[problem.free] - problem.lift[problem.free])
        kept.append(i)
    matrix = np.column_stack(cols) if cols else np.zeros((problem.num_free, 0))
    return Snapshots(problem, params[kept], matrix, skipped)


def _x_orthonormalize(X, vec, basis: list, Xbasis: list, tol=1e-10):
    """Gram-Schmidt with one reorthogonalization pass; None if ``vec`` is dependent."""
    Xv = X @ vec
    norm0 = np.sqrt(vec @ Xv)
    if norm0 == 0.0:
        return None
    q = vec.copy()
    for _ in range(2):
        for z, Xz in zip(basis, Xbasis):
            q -= (Xz @ q) * z
    Xq = X @ q
    norm = np.sqrt(max(q @ Xq, 0.0))
    if norm <= tol * norm0:
        return None
    return q / norm, Xq / norm


@dataclass
class ReducedModel:
    """Galerkin reduced model on the span of ``basis`` (free dofs, X-orthonormal).

    For affine problems the operator and right-hand side are stored as
    projected blocks; otherwise the online stage assembles the high-fidelity
    system and projects it. ``dual_*`` blocks support the dual-weighted
    residual indicator.
    """

    problem: ParametricProblem
    basis: np.ndarray
    qoi_reduced: np.ndarray
    lift_qoi: float
    operator_blocks: Optional[np.ndarray] = None
    rhs_blocks: Optional[np.ndarray] = None
    dual_basis: Optional[np.ndarray] = None
    dual_operator_blocks: Optional[np.ndarray] = None
    cross_blocks: Optional[np.ndarray] = None
    dual_rhs_blocks: Optional[np.ndarray] = None
    dual_qoi: Optional[np.ndarray] = None
    singular_values: Optional[np.ndarray] = None
    epsilon: Optional[float] = None
    norm: str = "V"
    method: str = "pod"
    selected: list = field(default_factory=list)
    indicator_history: list = field(default_factory=list)

    @property
    def N(self) -> int:
        return self.basis.shape[1]

    @property
    def is_affine(self) -> bool:
        return self.operator_blocks is not None

    @property
    def has_dual(self) -> bool:
        return self.dual_basis is not None

    def truncated(self, N: int) -> "ReducedModel":
        """Leading ``N`` basis functions (nested construction)."""
        if not 0 <= N <= self.N:
            raise ValueError(f"cannot truncate a rank-{self.N} model to {N}")
        kw = dict(
            basis=self.basis[:, :N],
            qoi_reduced=self.qoi_reduced[:N],
            operator_blocks=None if self.operator_blocks is None else self.operator_blocks[:, :N, :N],
            rhs_blocks=None if self.rhs_blocks is None else self.rhs_blocks[:, :N],
        )
        if self.has_dual:
            Nd = min(N, self.dual_basis.shape[1])
            kw.update(
                dual_basis=self.dual_basis[:, :Nd],
                dual_operator_blocks=self.dual_operator_blocks[:, :Nd, :Nd],
                cross_blocks=self.cross_blocks[:, :Nd, :N],
                dual_rhs_blocks=self.dual_rhs_blocks[:, :Nd],
                dual_qoi=self.dual_qoi[:Nd],
            )
        return replace(self, **kw)

    # ------------------------------------------------------------------ online
    def assemble(self, p):
        """Reduced operator and right-hand side at ``p``."""
        if self.is_affine:
            theta_a, theta_f = self.problem.affine.theta(np.asarray(p, dtype=float))
            A = np.tensordot(theta_a, self.operator_blocks, axes=1)
            f = theta_f @ self.rhs_blocks
            return A, f
        A_h, f_h = self.problem.assemble_at(p)
        Z = self.basis
        return Z.T @ (A_h @ Z), Z.T @ f_h

    def solve(self, p) -> np.ndarray:
        if self.N == 0:
            return np.zeros(0)
        A, f = self.assemble(p)
        try:
            return np.linalg.solve(A, f)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"singular reduced system (degenerate basis): {exc}") from exc

    def qoi(self, u_N: np.ndarray) -> float:
        return float(self.qoi_reduced @ u_N + self.lift_qoi)

    def reconstruct(self, u_N: np.ndarray) -> np.ndarray:
        """Full-length high-fidelity vector of a reduced solution (lift included)."""
        return self.problem.embed(self.basis @ u_N)

    def error_indicator(self, p) -> float:
        """Dual-weighted residual ``|f(psi_N) - a(u_N, psi_N)|``."""
        if not self.has_dual:
            raise ValueError("model has no dual basis; build it with greedy_construct")
        if not self.is_affine:
            raise ValueError("the dual-weighted residual needs an affine model")
        return float(self.indicators(np.atleast_2d(p))[0])

    def indicators(self, params) -> np.ndarray:
        """Vectorized :meth:`error_indicator` over stacked parameters."""
        aff = self.problem.affine
        params = np.atleast_2d(params)
        theta = [aff.theta(p) for p in params]
        ta = np.array([t[0] for t in theta])
        tf = np.array([t[1] for t in theta])
        out = np.empty(len(params))
        N = self.N
        for s in range(0, len(params), _CHUNK):
            sl = slice(s, s + _CHUNK)
            a, f = ta[sl], tf[sl]
            if N:
                A = np.einsum("tq,qmn->tmn", a, self.operator_blocks)
                rhs = f @ self.rhs_blocks
                uN = np.linalg.solve(A, rhs[..., None])[..., 0]
            else:
                uN = np.zeros((len(a), 0))
            Ad = np.einsum("tq,qmn->tmn", a, self.dual_operator_blocks)
            psi = np.linalg.solve(Ad, np.broadcast_to(self.dual_qoi, (len(a), self.dual_qoi.size))[..., None])[..., 0]
            res = np.einsum("tm,tm->t", f @ self.dual_rhs_blocks, psi)
            if N:
                Ac = np.einsum("tq,qmn->tmn", a, self.cross_blocks)
                res -= np.einsum("tm,tmn,tn->t", psi, Ac, uN)
            out[sl] = np.abs(res)
        return out

    # ------------------------------------------------------------ persistence
    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        aff = self.problem.affine
        meta = {
            "N": self.N,
            "Q_a": aff.Q_a if aff is not None else 0,
            "Q_f": aff.Q_f if aff is not None else 0,
            "epsilon": self.epsilon,
            "norm": self.norm,
            "method": self.method,
            "lift_qoi": repr(self.lift_qoi),
            "N_dual": self.dual_basis.shape[1] if self.has_dual else 0,
        }
        (d / "metadata.txt").write_text("".join(f"{k} = {v}\n" for k, v in meta.items()))
        write_vectors(d / "basis.txt", self.basis.T)
        write_vectors(d / "qoi.txt", self.qoi_reduced)
        if self.singular_values is not None:
            write_vectors(d / "singular_values.txt", self.singular_values)
        if self.is_affine:
            for q, B in enumerate(self.operator_blocks):
                write_vectors(d / f"A_{q}.txt", B)
            write_vectors(d / "f.txt", self.rhs_blocks)
        if self.has_dual:
            write_vectors(d / "dual_basis.txt", self.dual_basis.T)
            write_vectors(d / "dual_qoi.txt", self.dual_qoi)
            write_vectors(d / "dual_f.txt", self.dual_rhs_blocks)
            for q in range(self.dual_operator_blocks.shape[0]):
                write_vectors(d / f"dual_A_{q}.txt", self.dual_operator_blocks[q])
                write_vectors(d / f"cross_A_{q}.txt", self.cross_blocks[q])

    @classmethod
    def load(cls, directory, problem: ParametricProblem) -> "ReducedModel":
        d = Path(directory)
        meta = dict(
            (k.strip(), v.strip())
            for k, v in (ln.split("=", 1) for ln in (d / "metadata.txt").read_text().splitlines() if ln)
        )
        N, Q_a, N_dual = int(meta["N"]), int(meta["Q_a"]), int(meta["N_dual"])

        def mat(name, rows, cols):
            return read_vectors(d / name).reshape(rows, cols)

        nf = problem.num_free
        model = cls(
            problem=problem,
            basis=mat("basis.txt", N, nf).T.copy(),
            qoi_reduced=read_vectors(d / "qoi.txt").reshape(N),
            lift_qoi=float(meta["lift_qoi"]),
            epsilon=None if meta["epsilon"] == "None" else float(meta["epsilon"]),
            norm=meta["norm"],
            method=meta["method"],
        )
        if (d / "singular_values.txt").exists():
            model.singular_values = read_vectors(d / "singular_values.txt").ravel()
        if Q_a:
            model.operator_blocks = np.stack([mat(f"A_{q}.txt", N, N) for q in range(Q_a)])
            model.rhs_blocks = mat("f.txt", int(meta["Q_f"]), N)
        if N_dual:
            model.dual_basis = mat("dual_basis.txt", N_dual, nf).T.copy()
            model.dual_qoi = read_vectors(d / "dual_qoi.txt").reshape(N_dual)
            model.dual_rhs_blocks = mat("dual_f.txt", int(meta["Q_f"]), N_dual)
            model.dual_operator_blocks = np.stack(
                [mat(f"dual_A_{q}.txt", N_dual, N_dual) for q in range(Q_a)]
            )
            model.cross_blocks = np.stack([mat(f"cross_A_{q}.txt", N_dual, N) for q in range(Q_a)])
        return model


# ---------------------------------------------------------------- projection
def _project_primal(problem: ParametricProblem, Z: np.ndarray, **kw) -> ReducedModel:
    s_free = problem.qoi_vector[problem.free]
    model = ReducedModel(problem, Z, Z.T @ s_free, problem.lift_qoi, **kw)
    if problem.is_affine:
        aff = problem.affine
        model.operator_blocks = np.stack([Z.T @ (Aq @ Z) for Aq in aff.operator_terms])
        model.rhs_blocks = np.stack([Z.T @ fq for fq in aff.rhs_terms])
    return model


def attach_dual_basis(model: ReducedModel, W: np.ndarray, orthonormalize: bool = True) -> ReducedModel:
    """Add a dual space ``W`` (free dofs) and its projected blocks to an affine model."""
    pb = model.problem
    if not pb.is_affine:
        raise ValueError("dual blocks need an affine problem")
    if orthonormalize:
        X = pb.energy_matrix_free()
        cols, Xcols = [], []
        for w in np.atleast_2d(W.T):
            res = _x_orthonormalize(X, w, cols, Xcols)
            if res is not None:
                cols.append(res[0])
                Xcols.append(res[1])
        W = np.column_stack(cols)
    aff = pb.affine
    Z = model.basis
    AW = [Aq @ W for Aq in aff.operator_terms]
    model.dual_basis = W
    model.dual_operator_blocks = np.stack([W.T @ x for x in AW])
    model.cross_blocks = np.stack([x.T @ Z for x in AW])  # (m dual, n primal)
    model.dual_rhs_blocks = np.stack([W.T @ fq for fq in aff.rhs_terms])
    model.dual_qoi = W.T @ pb.qoi_vector[pb.free]
    return model


# ----------------------------------------------------------------------- POD
def _norm_factor(problem: ParametricProblem, norm: str):
    if norm == "V":
        return SparseCholesky(problem.energy_matrix_free())
    if norm == "l2":
        return None
    raise ValueError(f"unknown POD norm {norm!r} (use 'V' or 'l2')")


def pod_construct(snapshots: Snapshots, epsilon: float, N_max: int, norm: str = "V") -> ReducedModel:
    """POD basis from the X-weighted SVD of the snapshot matrix.

    ``N`` is the smallest count retaining a ``1 - epsilon`` fraction of the
    squared singular values, capped at ``N_max``.
    """
    U = snapshots.matrix
    pb = snapshots.problem
    if U.size == 0 or not np.any(U):
        raise ValueError("snapshot matrix is empty or identically zero")
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    chol = _norm_factor(pb, norm)

    if U.shape[1] <= GRAM_SVD_THRESHOLD:
        BU = U if chol is None else chol.factor_transpose_matvec(U)
        zeta, sigma, _ = np.linalg.svd(BU, full_matrices=False)
        tol = sigma[0] * max(BU.shape) * np.finfo(float).eps
        r = int(np.count_nonzero(sigma > tol))
        N = _energy_rank(sigma[:r], epsilon, N_max)
        Z = zeta[:, :N] if chol is None else chol.factor_transpose_solve(zeta[:, :N])
    else:
        XU = U if chol is None else pb.energy_matrix_free() @ U
        G = U.T @ XU
        ev, Wv = np.linalg.eigh(0.5 * (G + G.T))
        ev, Wv = ev[::-1], Wv[:, ::-1]
        sigma = np.sqrt(np.clip(ev, 0.0, None))
        tol = sigma[0] * max(U.shape) * np.finfo(float).eps ** 0.5
        r = int(np.count_nonzero(sigma > tol))
        N = _energy_rank(sigma[:r], epsilon, N_max)
        Z = U @ (Wv[:, :N] / sigma[:N])
        # squaring the snapshot matrix costs accuracy; restore X-orthonormality
        XZ_op = (lambda V: V) if chol is None else (lambda V: pb.energy_matrix_free() @ V)
        for _ in range(2):
            R = np.linalg.cholesky(Z.T @ XZ_op(Z)).T
            Z = np.linalg.solve(R.T, Z.T).T
    log.info("POD: rank %d, retained N=%d", r, N)
    return _project_primal(
        pb, np.ascontiguousarray(Z), singular_values=sigma[:r], epsilon=epsilon, norm=norm, method="pod"
    )


def _energy_rank(sigma: np.ndarray, epsilon: float, N_max: int) -> int:
    energy = np.cumsum(sigma**2)
    frac = energy / energy[-1]
    N = int(np.searchsorted(frac, 1.0 - epsilon) + 1)
    return max(1, min(N, sigma.size, N_max))


# -------------------------------------------------------------------- greedy
def greedy_construct(problem: ParametricProblem, training, N_max: int, tol: float = 0.0) -> ReducedModel:
    """Goal-oriented greedy driven by the dual-weighted residual indicator.

    Starts from the first training parameter, then repeatedly adds the primal
    and dual high-fidelity solutions at the maximizer of the indicator (lowest
    index on ties). Stops at ``N_max`` functions or when the largest indicator
    drops to ``tol``.
    """
    if not problem.is_affine:
        raise ValueError(
            "greedy construction needs an affine problem: the dual-weighted residual "
            "cannot be evaluated online without an affine decomposition"
        )
    params = np.atleast_2d(np.asarray(training, dtype=float))
    if params.shape[0] == 0:
        raise ValueError("training set is empty")
    X = problem.energy_matrix_free()
    Z, XZ, W, XW = [], [], [], []
    chosen, history = [], []
    idx = 0
    model = None
    while len(Z) < N_max:
        p = params[idx]
        factor = problem.factorize(p)
        u = problem.solve_state(p, factor)[problem.free] - problem.lift[problem.free]
        psi = problem.solve_adjoint(p, factor)[problem.free]
        z = _x_orthonormalize(X, u, Z, XZ)
        if z is None:
            log.info("greedy: snapshot %d already in the span, stopping", idx)
            break
        Z.append(z[0])
        XZ.append(z[1])
        w = _x_orthonormalize(X, psi, W, XW)
        if w is not None:
            W.append(w[0])
            XW.append(w[1])
        chosen.append(idx)
        model = _project_primal(problem, np.column_stack(Z), method="greedy")
        attach_dual_basis(model, np.column_stack(W), orthonormalize=False)
        if len(Z) >= N_max:
            break
        delta = model.indicators(params)
        idx = int(np.argmax(delta))
        history.append(float(delta[idx]))
        if delta[idx] <= tol:
            break
    if model is None:
        raise ValueError("greedy construction produced no basis functions")
    model.singular_values = None
    model.epsilon = None
    model.selected = chosen
    model.indicator_history = history
    return model


# ------------------------------------------------------ module-level aliases
def rb_solve(model: ReducedModel, p) -> np.ndarray:
    return model.solve(p)


def rb_qoi(model: ReducedModel, u_N) -> float:
    return model.qoi(u_N)


def error_indicator(model: ReducedModel, p) -> float:
    return model.error_indicator(p)
