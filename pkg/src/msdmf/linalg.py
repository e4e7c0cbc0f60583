"""Kronecker-structured linear algebra shared by all other modules.

Conventions used throughout the package:

* ``vec`` stacks a matrix into a vector by column, so a ``k1 x k2`` factor
  matrix ``F`` satisfies ``(C (x) R) vec(F) = vec(R F C^T)``.
* Covariance blocks are plain symmetric ndarrays; helpers below enforce or
  check symmetry rather than wrapping arrays in a dedicated type.
* SPD solves add a single shot of diagonal jitter (``1e-10 * trace / dim``)
  on factorization failure before giving up, because collapsed covariances
  can be numerically semidefinite.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import lapack

__all__ = [
    "SingularMatrixError",
    "vec",
    "unvec",
    "unvec_batch",
    "vec_batch",
    "kron",
    "kron_apply",
    "logdet_spd",
    "solve_spd",
    "symmetrize",
    "is_symmetric",
    "psd_sqrt",
]

SPD_JITTER_SCALE = 1e-10


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a matrix expected to be SPD fails factorization.

    Attributes
    ----------
    pivot : int or None
        1-based index of the first non-positive Cholesky pivot, if known.
    cond : float or None
        Condition-number estimate of the offending matrix, if computed.
    """

    def __init__(self, message, pivot=None, cond=None):
        super().__init__(message)
        self.pivot = pivot
        self.cond = cond


def vec(M: np.ndarray) -> np.ndarray:
    """Stack a matrix into a vector by column."""
    M = np.asarray(M)
    if M.ndim != 2:
        raise ValueError(f"vec expects a 2-d array, got ndim={M.ndim}")
    return M.reshape(-1, order="F")


def unvec(v: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Inverse of :func:`vec`: reshape a vector into a rows x cols matrix."""
    v = np.asarray(v).reshape(-1)
    if v.size != rows * cols:
        raise ValueError(
            f"unvec: vector of length {v.size} cannot fill a {rows}x{cols} matrix"
        )
    return v.reshape((rows, cols), order="F")


def unvec_batch(v: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Column-major unvec applied along the last axis of a stacked array."""
    v = np.asarray(v)
    if v.shape[-1] != rows * cols:
        raise ValueError(
            f"unvec_batch: last axis {v.shape[-1]} != {rows}*{cols}"
        )
    return v.reshape(v.shape[:-1] + (cols, rows)).swapaxes(-1, -2)


def vec_batch(M: np.ndarray) -> np.ndarray:
    """Column-major vec applied to the trailing two axes of a stacked array."""
    M = np.asarray(M)
    return np.swapaxes(M, -1, -2).reshape(M.shape[:-2] + (-1,))


def kron(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Standard Kronecker product ``A (x) B``."""
    return np.kron(np.asarray(A), np.asarray(B))


def kron_apply(C: np.ndarray, R: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Compute ``(C (x) R) v`` without materializing the Kronecker product.

    Uses the identity ``(C (x) R) vec(X) = vec(R X C^T)`` with
    ``X = unvec(v)``; cost is O(pq(k1+k2)) instead of O(pq k1 k2).
    """
    C = np.asarray(C)
    R = np.asarray(R)
    v = np.asarray(v).reshape(-1)
    if v.size != C.shape[1] * R.shape[1]:
        raise ValueError(
            f"kron_apply: vector length {v.size} != cols(C)*cols(R) "
            f"= {C.shape[1]}*{R.shape[1]}"
        )
    X = unvec(v, R.shape[1], C.shape[1])
    return vec(R @ X @ C.T)


def symmetrize(S: np.ndarray) -> np.ndarray:
    """Return the symmetric part ``(S + S^T)/2`` (works on stacked arrays)."""
    return 0.5 * (S + np.swapaxes(S, -1, -2))


def is_symmetric(S: np.ndarray, rtol: float = 1e-10) -> bool:
    S = np.asarray(S)
    scale = max(float(np.max(np.abs(S))), 1.0)
    return bool(np.max(np.abs(S - S.T)) <= rtol * scale)


def _cholesky(S: np.ndarray):
    """LAPACK Cholesky returning (factor, pivot_info)."""
    c, info = lapack.dpotrf(S, lower=1, overwrite_a=0)
    return c, int(info)


def logdet_spd(S: np.ndarray) -> float:
    """Log-determinant of an SPD matrix via Cholesky factorization.

    Raises :class:`SingularMatrixError` carrying the 1-based index of the
    offending pivot when ``S`` is not positive definite.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("logdet_spd expects a square matrix")
    c, info = _cholesky(S)
    if info > 0:
        raise SingularMatrixError(
            f"matrix is not positive definite (pivot {info})", pivot=info
        )
    if info < 0:
        raise ValueError(f"illegal value in argument {-info} of dpotrf")
    return 2.0 * float(np.sum(np.log(np.diag(c))))


def solve_spd(S: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve ``S X = B`` for SPD ``S``, with one jitter retry.

    On factorization failure a diagonal jitter of
    ``1e-10 * trace(S) / dim`` is added once; if the factorization still
    fails a :class:`SingularMatrixError` with a condition estimate is raised.
    """
    S = np.asarray(S, dtype=float)
    B = np.asarray(B, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("solve_spd expects a square matrix")
    squeeze = B.ndim == 1
    B2 = B[:, None] if squeeze else B
    if B2.shape[0] != S.shape[0]:
        raise ValueError(
            f"solve_spd: rhs has {B2.shape[0]} rows, matrix is {S.shape[0]}x{S.shape[0]}"
        )
    c, info = _cholesky(S)
    if info > 0:
        jitter = SPD_JITTER_SCALE * max(np.trace(S), 0.0) / S.shape[0]
        c, info = _cholesky(S + jitter * np.eye(S.shape[0]))
        if info > 0:
            eigs = np.linalg.eigvalsh(symmetrize(S))
            cond = float(abs(eigs[-1]) / abs(eigs[0])) if eigs[0] != 0 else np.inf
            raise SingularMatrixError(
                f"matrix singular after jitter (pivot {info}, cond~{cond:.3e})",
                pivot=info,
                cond=cond,
            )
    X, info2 = lapack.dpotrs(c, B2, lower=1)
    if info2 != 0:
        raise SingularMatrixError(f"dpotrs failed with info={info2}")
    return X[:, 0] if squeeze else X


def psd_sqrt(S: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root, clipping tiny negative eigenvalues to 0."""
    w, U = np.linalg.eigh(symmetrize(np.asarray(S, dtype=float)))
    w = np.clip(w, 0.0, None)
    return (U * np.sqrt(w)) @ U.T
