"""Sparse symmetric positive definite factorizations.

SuperLU run in symmetric mode with diagonal pivoting yields ``P A P^T = L U``
with ``U = D L^T``, i.e. an LDL^T factorization on a fill-reducing ordering.
For SPD input every pivot in ``D`` is positive, which doubles as the
definiteness check (pivots at rounding level count as singular).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a matrix expected to be SPD has a nonpositive pivot."""


class SparseCholesky:
    """Cholesky-type factorization ``A = S S^T`` of a sparse SPD matrix.

    Parameters
    ----------
    A : sparse matrix
        Symmetric positive definite matrix.

    Notes
    -----
    ``solve`` accepts vectors or 2-D blocks of right-hand sides. ``factor_*``
    methods expose the factor ``S = P^T L D^{1/2}``, where ``P`` is the
    fill-reducing row permutation.
    """

    def __init__(self, A):
        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix must be square, got {A.shape}")
        self.shape = A.shape
        try:
            self._lu = spla.splu(
                A,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options=dict(SymmetricMode=True),
            )
        except RuntimeError as exc:  # exactly singular
            raise NotPositiveDefiniteError(str(exc)) from exc
        pivots = self._lu.U.diagonal()
        # pivots at rounding level relative to the diagonal mean numerical singularity
        floor = 10 * A.shape[0] * np.finfo(float).eps * np.abs(A.diagonal()).max(initial=0.0)
        bad = np.flatnonzero(~(pivots > floor))
        if bad.size or not np.array_equal(self._lu.perm_r, self._lu.perm_c):
            raise NotPositiveDefiniteError(
                f"matrix is not positive definite ({bad.size} nonpositive pivots)"
            )
        self._perm = self._lu.perm_r
        self._sqrt_d = np.sqrt(pivots)
        self._L = None

    @property
    def n(self) -> int:
        return self.shape[0]

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Return ``A^{-1} b``."""
        return self._lu.solve(np.asarray(b, dtype=float))

    def _lower(self):
        if self._L is None:
            self._L = sp.csr_matrix(self._lu.L)
        return self._L

    def factor_matvec(self, x: np.ndarray) -> np.ndarray:
        """Return ``S x`` where ``A = S S^T``."""
        x = np.asarray(x, dtype=float)
        scale = self._sqrt_d if x.ndim == 1 else self._sqrt_d[:, None]
        return (self._lower() @ (scale * x))[self._perm]

    def factor_transpose_matvec(self, x: np.ndarray) -> np.ndarray:
        """Return ``S^T x``."""
        x = np.asarray(x, dtype=float)
        z = np.empty_like(x)
        z[self._perm] = x
        y = self._lower().T @ z
        scale = self._sqrt_d if y.ndim == 1 else self._sqrt_d[:, None]
        return scale * y

    def factor_solve(self, b: np.ndarray) -> np.ndarray:
        """Return ``S^{-1} b``."""
        b = np.asarray(b, dtype=float)
        z = np.empty_like(b)
        z[self._perm] = b
        y = spla.spsolve_triangular(self._lower(), z, lower=True, unit_diagonal=True)
        scale = self._sqrt_d if y.ndim == 1 else self._sqrt_d[:, None]
        return y / scale

    def factor_transpose_solve(self, b: np.ndarray) -> np.ndarray:
        """Return ``S^{-T} b``."""
        b = np.asarray(b, dtype=float)
        scale = self._sqrt_d if b.ndim == 1 else self._sqrt_d[:, None]
        y = spla.spsolve_triangular(
            sp.csr_matrix(self._lower().T), b / scale, lower=False, unit_diagonal=True
        )
        return y[self._perm]


def apply_columns(action, X: np.ndarray) -> np.ndarray:
    """Apply a vector-to-vector callable to each column of ``X``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        return np.asarray(action(X), dtype=float)
    if X.shape[1] == 0:
        return np.zeros_like(X)
    return np.column_stack([action(X[:, j]) for j in range(X.shape[1])])
