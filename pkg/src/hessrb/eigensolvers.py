"""Dominant generalized eigenpairs of ``(H, C^{-1})``.

:func:`randomized_gevp` needs only actions of ``H``, ``C`` and ``C^{-1}``;
:func:`dense_gevp` is the reference solver used to validate it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .linalg import apply_columns
from .textio import read_vectors, write_vectors


@dataclass
class GeneralizedEigenPairs:
    """Eigenvalues sorted by decreasing magnitude and ``C^{-1}``-orthonormal eigenvectors."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    rank_deficient: bool = False
    hessian_actions: int = 0

    @property
    def count(self) -> int:
        return self.eigenvalues.size

    @property
    def dimension(self) -> int:
        return self.eigenvectors.shape[0]

    def truncate(self, L: int) -> "GeneralizedEigenPairs":
        return GeneralizedEigenPairs(
            self.eigenvalues[:L].copy(),
            self.eigenvectors[:, :L].copy(),
            self.rank_deficient,
            self.hessian_actions,
        )

    def save(self, path) -> None:
        write_vectors(path, self.eigenvectors.T, leading=self.eigenvalues)

    @classmethod
    def load(cls, path) -> "GeneralizedEigenPairs":
        lam, vecs = read_vectors(path, leading=True)
        return cls(lam, vecs.T.copy())


def _sort_by_magnitude(lam: np.ndarray, vecs: np.ndarray):
    # eigh returns ascending values; scan from the top so ties keep that order
    lam, vecs = lam[::-1], vecs[:, ::-1]
    idx = np.argsort(-np.abs(lam), kind="stable")
    return lam[idx], vecs[:, idx]


def fix_signs(vecs: np.ndarray) -> np.ndarray:
    """Flip columns in place so each one's largest-magnitude entry is nonnegative."""
    for j in range(vecs.shape[1]):
        k = np.argmax(np.abs(vecs[:, j]))
        if vecs[k, j] < 0:
            vecs[:, j] *= -1.0
    return vecs


def weighted_qr(Y: np.ndarray, Cinv_action, drop_tol: float = 1e-12):
    """QR factorization ``Y = Q R`` with ``Q^T C^{-1} Q = I``.

    Modified Gram-Schmidt in the ``C^{-1}`` inner product, two passes per
    column. A column whose remainder falls below ``drop_tol`` times its
    original ``C^{-1}``-norm is dropped: its ``Q`` column is zero and the
    corresponding diagonal entry of ``R`` is zero.
    """
    Y = np.array(Y, dtype=float)
    K, m = Y.shape
    if m > K:
        raise ValueError(f"cannot orthonormalize {m} columns in dimension {K}")
    Q = np.zeros((K, m))
    WQ = np.zeros((K, m))  # C^{-1} Q
    R = np.zeros((m, m))
    for j in range(m):
        q = Y[:, j].copy()
        w = np.asarray(Cinv_action(q), dtype=float)
        norm0 = np.sqrt(max(q @ w, 0.0))
        if norm0 == 0.0:
            continue
        for _ in range(2):
            for i in range(j):
                if R[i, i] == 0.0:
                    continue
                r = WQ[:, i] @ q
                R[i, j] += r
                q -= r * Q[:, i]
            w = np.asarray(Cinv_action(q), dtype=float)
        norm = np.sqrt(max(q @ w, 0.0))
        if norm <= drop_tol * norm0:
            continue
        R[j, j] = norm
        Q[:, j] = q / norm
        WQ[:, j] = w / norm
    return Q, R


def _probe_completion(Q, R, Omega, Cinv_action, target: int):
    """Fill dropped directions with ``C^{-1}``-orthonormalized probe vectors.

    Dropped columns mean ``H`` annihilates part of the probe space. The probe
    vectors complete the basis there so the null eigenvalues are still
    reported, with the same number of columns (and Hessian actions).
    """
    kept = np.flatnonzero(np.diag(R) != 0.0)
    Qk = Q[:, kept]
    need = target - kept.size
    if need <= 0:
        return Qk
    room = Qk.shape[0] - kept.size
    Qc, Rc = weighted_qr(np.column_stack([Qk, Omega[:, :room]]), Cinv_action)
    extra = [j for j in range(kept.size, Qc.shape[1]) if Rc[j, j] != 0.0][:need]
    return np.column_stack([Qk, Qc[:, extra]])


def randomized_gevp(
    H_action, C_action, Cinv_action, K: int, L: int, c: int = 10, seed=None
) -> GeneralizedEigenPairs:
    """Randomized two-pass solver for ``H phi = lambda C^{-1} phi``.

    Draws a Gaussian ``K x (L + c)`` probe ``Omega``, forms ``Y = C (H Omega)``,
    orthonormalizes it in the ``C^{-1}`` inner product, and diagonalizes
    ``T = Q^T H Q``. Exactly ``2 (L + c)`` Hessian actions are spent.
    """
    if L < 1:
        raise ValueError("L must be at least 1")
    if c < 0 or L + c > K:
        raise ValueError(f"need 0 <= c and L + c <= K (L={L}, c={c}, K={K})")
    rng = np.random.default_rng(seed)
    m = L + c
    Omega = rng.standard_normal((K, m))

    HOmega = apply_columns(H_action, Omega)
    Y = apply_columns(C_action, HOmega)
    Q, R = weighted_qr(Y, Cinv_action)
    rank = int(np.count_nonzero(np.diag(R)))
    Q = _probe_completion(Q, R, Omega, Cinv_action, m)

    HQ = apply_columns(H_action, Q)
    T = Q.T @ HQ
    T = 0.5 * (T + T.T)
    lam, S = np.linalg.eigh(T)
    lam, S = _sort_by_magnitude(lam, S)
    phi = fix_signs(Q @ S[:, :L])
    return GeneralizedEigenPairs(
        lam[:L], phi, rank_deficient=rank < L, hessian_actions=Omega.shape[1] + Q.shape[1]
    )


def dense_gevp(H: np.ndarray, Cinv: np.ndarray, L: int) -> GeneralizedEigenPairs:
    """Reference solver via ``C^{-1} = R^T R`` and a symmetric eigenproblem."""
    H = np.asarray(H, dtype=float)
    Cinv = np.asarray(Cinv, dtype=float)
    K = H.shape[0]
    if K > 4096:
        raise ValueError("dense_gevp is limited to K <= 4096")
    try:
        Rf = la.cholesky(0.5 * (Cinv + Cinv.T), lower=False)
    except la.LinAlgError as exc:
        raise ValueError("C^{-1} is not symmetric positive definite") from exc
    B = la.solve_triangular(Rf, la.solve_triangular(Rf, H.T, trans="T").T, trans="T")
    B = 0.5 * (B + B.T)
    lam, Y = np.linalg.eigh(B)
    lam, Y = _sort_by_magnitude(lam, Y)
    phi = fix_signs(la.solve_triangular(Rf, Y[:, :L]))
    return GeneralizedEigenPairs(lam[:L], phi)
