"""Dense/sparse complex linear algebra primitives.

Bases are plain 2-D numpy arrays with orthonormal columns; matrices are
either numpy arrays or ``scipy.sparse`` matrices.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DimensionMismatch, DimensionTooLarge, EmptyBasis, SingularMatrix

PIVOT_TOL = 1e-14
DROP_TOL = 1e-10
DENSE_THRESHOLD = 500
SVD_CAP = 5000


def _max_abs(A) -> float:
    if sp.issparse(A):
        return float(abs(A).max()) if A.nnz else 0.0
    return float(np.max(np.abs(A))) if A.size else 0.0


class Factorization:
    """Reusable LU factorization of a square matrix.

    Sparse input of size ``n >= DENSE_THRESHOLD`` goes through SuperLU,
    everything else through dense LAPACK ``getrf``. ``solve`` is thread safe
    since neither backend mutates its factors.
    """

    def __init__(self, A, dense_threshold: int = DENSE_THRESHOLD):
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"factorize needs a square matrix, got {A.shape}")
        self.shape = A.shape
        self.dtype = np.result_type(A.dtype, np.float64)
        scale = _max_abs(A)
        if scale == 0.0:
            raise SingularMatrix("zero matrix")
        threshold = PIVOT_TOL * scale
        self._sparse = sp.issparse(A) and A.shape[0] >= dense_threshold
        if self._sparse:
            try:
                self._lu = spla.splu(sp.csc_matrix(A, dtype=self.dtype))
            except RuntimeError as exc:
                raise SingularMatrix(str(exc)) from None
            pivots = np.abs(self._lu.U.diagonal())
        else:
            dense = A.toarray() if sp.issparse(A) else np.asarray(A)
            with warnings.catch_warnings():
                # exact zero pivots are reported below as SingularMatrix
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                self._lu = sla.lu_factor(dense.astype(self.dtype, copy=False), check_finite=False)
            pivots = np.abs(np.diag(self._lu[0]))
        if pivots.size and pivots.min() <= threshold:
            raise SingularMatrix(
                f"pivot {pivots.min():.3e} below {PIVOT_TOL:g} x max|entry| ({scale:.3e})"
            )

    def solve(self, y, transpose: bool = False) -> np.ndarray:
        """Solve ``A x = y`` (or ``A^T x = y``) for a vector or a block of columns."""
        y = np.asarray(y)
        if y.shape[0] != self.shape[0]:
            raise DimensionMismatch(f"rhs has {y.shape[0]} rows, matrix has {self.shape[0]}")
        dtype = np.result_type(self.dtype, y.dtype)
        if self._sparse:
            rhs = np.ascontiguousarray(y, dtype=dtype)
            if dtype != self.dtype:
                # SuperLU factors are real; split complex rhs.
                trans = "T" if transpose else "N"
                return self._lu.solve(rhs.real.copy(), trans=trans) + 1j * self._lu.solve(
                    rhs.imag.copy(), trans=trans
                )
            return self._lu.solve(rhs, trans="T" if transpose else "N")
        return sla.lu_solve(self._lu, y.astype(dtype, copy=False), trans=1 if transpose else 0,
                            check_finite=False)


def factorize(A, dense_threshold: int = DENSE_THRESHOLD) -> Factorization:
    return Factorization(A, dense_threshold=dense_threshold)


def _as_columns(M) -> np.ndarray:
    M = np.asarray(M)
    if M.ndim == 1:
        M = M[:, None]
    return M


def extend(Q, M, drop_tol: float = DROP_TOL) -> np.ndarray:
    """Append the columns of ``M`` to the orthonormal basis ``Q``.

    Modified Gram-Schmidt with one re-orthogonalization pass. A candidate is
    dropped when its norm after projection is below ``drop_tol`` times its
    norm before projection. ``Q`` itself is left untouched.
    """
    M = _as_columns(M)
    n = M.shape[0]
    if Q is None:
        Q = np.zeros((n, 0), dtype=M.dtype)
    Q = _as_columns(Q)
    if Q.shape[0] != n:
        raise DimensionMismatch(f"basis has {Q.shape[0]} rows, new columns have {n}")
    dtype = np.result_type(Q.dtype, M.dtype, np.float64)
    cols = [Q[:, j].astype(dtype) for j in range(Q.shape[1])]
    for j in range(M.shape[1]):
        v = M[:, j].astype(dtype, copy=True)
        before = np.linalg.norm(v)
        if before == 0.0 or not np.isfinite(before):
            continue
        for _ in range(2):
            for q in cols:
                v -= np.vdot(q, v) * q
        after = np.linalg.norm(v)
        if after < drop_tol * before:
            continue
        cols.append(v / after)
    if not cols:
        return np.zeros((n, 0), dtype=dtype)
    return np.column_stack(cols)


def orth(M, drop_tol: float = DROP_TOL) -> np.ndarray:
    """Orthonormal basis of ``range(M)``; rank-deficient directions are dropped.

    Raises
    ------
    EmptyBasis
        If no column survives the drop test.
    """
    M = _as_columns(M)
    if M.shape[1] == 0:
        raise EmptyBasis("orth needs at least one column")
    Q = extend(None, M, drop_tol=drop_tol)
    if Q.shape[1] == 0:
        raise EmptyBasis("all columns fell below the drop tolerance")
    return Q


def real_split(V, drop_tol: float = DROP_TOL) -> np.ndarray:
    """Real orthonormal basis of ``span{Re V, Im V}``."""
    V = _as_columns(V)
    return orth(np.hstack([V.real, np.imag(V)]).astype(np.float64), drop_tol=drop_tol)


def extremal_singular_values(A, cap: int = SVD_CAP) -> tuple[float, float]:
    """Smallest and largest singular value of a square matrix via dense SVD."""
    if A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got {A.shape}")
    if A.shape[0] > cap:
        raise DimensionTooLarge(
            f"n={A.shape[0]} exceeds the dense SVD cap of {cap}; "
            "the standard estimator is disabled at this size"
        )
    dense = A.toarray() if sp.issparse(A) else np.asarray(A)
    if np.iscomplexobj(dense) and not np.any(dense.imag):
        dense = dense.real  # real SVD is about 2.5x cheaper
    s = sla.svdvals(dense, check_finite=False)
    return float(s[-1]), float(s[0])


def projector_residual(Q, M) -> float:
    """``max_j ||M_j - Q Q^H M_j|| / ||M_j||``: how far ``range(M)`` sticks out of ``range(Q)``."""
    M = _as_columns(M)
    Q = _as_columns(Q)
    R = M - Q @ (Q.conj().T @ M)
    norms = np.linalg.norm(M, axis=0)
    norms[norms == 0] = 1.0
    return float(np.max(np.linalg.norm(R, axis=0) / norms)) if M.shape[1] else 0.0
