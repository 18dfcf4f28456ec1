"""Small dense linear algebra kernel.

Matrices here are tiny (S <= ~100), so plain Gaussian elimination with partial
pivoting is fast enough and keeps the singularity test under our control.
Inputs are anything ``np.asarray`` accepts; outputs are float64 arrays.
"""
from __future__ import annotations

import numpy as np

# Pivot magnitude below this fraction of max|entry| means singular.
SINGULAR_RTOL = 1e-12


class SingularMatrixError(ValueError):
    """Raised when elimination meets a pivot that is numerically zero."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] == 0 or a.shape[1] == 0:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def as_vector(b, name: str = "vector") -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 1 or b.shape[0] == 0:
        raise ValueError(f"{name} must be a non-empty 1-D array, got shape {b.shape}")
    if not np.all(np.isfinite(b)):
        raise ValueError(f"{name} has non-finite entries")
    return b


def identity(n: int) -> np.ndarray:
    return np.eye(n, dtype=np.float64)


def matmul(a, b) -> np.ndarray:
    """Matrix product ``a @ b`` with shape and finiteness checks."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def _eliminate(a: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Gauss-Jordan elimination of ``a x = rhs`` in place; returns x.

    ``rhs`` is 2-D (one column per right-hand side).
    """
    n = a.shape[0]
    scale = np.max(np.abs(a))
    if scale == 0.0:
        raise SingularMatrixError("matrix is identically zero")
    tol = SINGULAR_RTOL * scale
    for col in range(n):
        piv = col + int(np.argmax(np.abs(a[col:, col])))
        if abs(a[piv, col]) < tol:
            raise SingularMatrixError(
                f"pivot {a[piv, col]:.3e} in column {col} below tolerance {tol:.3e}"
            )
        if piv != col:
            a[[col, piv]] = a[[piv, col]]
            rhs[[col, piv]] = rhs[[piv, col]]
        p = a[col, col]
        a[col] /= p
        rhs[col] /= p
        factors = a[:, col].copy()
        factors[col] = 0.0
        a -= factors[:, None] * a[col]
        rhs -= factors[:, None] * rhs[col]
    return rhs


def invert(a) -> np.ndarray:
    """Inverse of a square matrix by Gauss-Jordan elimination with partial pivoting.

    Raises
    ------
    SingularMatrixError
        If some pivot falls below ``1e-12 * max|a|``.
    """
    a = as_matrix(a, "a")
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"cannot invert non-square matrix of shape {a.shape}")
    return _eliminate(a.copy(), identity(a.shape[0]))


def solve_linear(a, b) -> np.ndarray:
    """Solve ``a x = b`` for a square ``a`` and 1-D ``b``."""
    a = as_matrix(a, "a")
    b = as_vector(b, "b")
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"coefficient matrix must be square, got {a.shape}")
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return _eliminate(a.copy(), b.reshape(-1, 1).copy())[:, 0]
