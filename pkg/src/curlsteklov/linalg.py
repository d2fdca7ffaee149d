"""Sparse symmetric factorization with inertia.

SciPy has no sparse Cholesky, so SPD certification uses SuperLU in symmetric
mode: a symmetric fill-reducing permutation and no off-diagonal pivoting make
the factorization an LDL^T with ``D = diag(U)``. By Sylvester's law of
inertia the matrix is positive definite iff every pivot is positive.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spl


class SymmetricFactor:
    """LDL^T-type factorization of a sparse or dense symmetric matrix.

    Parameters
    ----------
    A : sparse or dense (n, n)
    pivot_floor : float
        Relative floor; the matrix counts as positive definite when every
        pivot exceeds ``pivot_floor * ||A||_max``.
    """

    def __init__(self, A, pivot_floor: float = 1e-10):
        self.n = A.shape[0]
        self.scale = _max_abs(A)
        self.pivot_floor = pivot_floor
        self.pivots = np.empty(0)
        self._lu = None
        self._dense = None
        if self.n == 0:
            return
        if sp.issparse(A):
            A = sp.csc_matrix(A)
            try:
                lu = spl.splu(
                    A,
                    permc_spec="MMD_AT_PLUS_A",
                    diag_pivot_thresh=0.0,
                    options=dict(SymmetricMode=True),
                )
            except RuntimeError:  # exactly singular
                self.pivots = np.zeros(1)
                return
            if np.array_equal(lu.perm_r, lu.perm_c):
                self.pivots = lu.U.diagonal().copy()
            else:  # SuperLU broke symmetry; fall back to eigenvalues
                self.pivots = np.linalg.eigvalsh(A.toarray())
            self._lu = lu
        else:
            A = np.asarray(A, dtype=float)
            lu, d, perm = sla.ldl(A, lower=True)
            # 2x2 blocks only occur for indefinite matrices
            self.pivots = np.linalg.eigvalsh(d) if np.any(np.diag(d, 1)) else np.diag(d).copy()
            self._dense = sla.lu_factor(A, check_finite=False)

    @property
    def positive_definite(self) -> bool:
        if self.n == 0:
            return True
        return bool(np.all(self.pivots > self.pivot_floor * self.scale))

    @property
    def nonsingular(self) -> bool:
        if self.n == 0:
            return True
        return bool(np.all(np.abs(self.pivots) > 1e-14 * self.scale))

    @property
    def inertia(self) -> tuple[int, int, int]:
        tol = 1e-14 * self.scale
        return (
            int(np.sum(self.pivots > tol)),
            int(np.sum(self.pivots < -tol)),
            int(np.sum(np.abs(self.pivots) <= tol)),
        )

    @property
    def min_pivot(self) -> float:
        return float(self.pivots.min()) if self.pivots.size else np.inf

    def solve(self, b):
        if self.n == 0:
            return np.zeros_like(np.asarray(b, dtype=float))
        if self._lu is not None:
            b = np.asarray(b, dtype=float)
            return self._lu.solve(b)
        if self._dense is not None:
            return sla.lu_solve(self._dense, b, check_finite=False)
        raise np.linalg.LinAlgError("matrix is singular")


def _max_abs(A) -> float:
    if sp.issparse(A):
        return float(abs(A).max()) if A.nnz else 0.0
    A = np.asarray(A)
    return float(np.abs(A).max()) if A.size else 0.0


def is_symmetric(A, rtol: float = 1e-12) -> bool:
    scale = _max_abs(A)
    diff = A - A.T
    return _max_abs(diff) <= rtol * max(scale, np.finfo(float).tiny)


def to_dense(A) -> np.ndarray:
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
