"""Dense float64 kernels shared by the model and the attacks.

Matrices are plain 2-D ``numpy.ndarray`` objects in C (row-major) order.
Every function returns a new array and never mutates its inputs.
"""

import numpy as np

from .errors import ShapeError


def as_matrix(a):
    """Coerce ``a`` to a C-contiguous 2-D float64 array."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def _check_finite(m, op):
    if not np.all(np.isfinite(m)):
        raise FloatingPointError(f"{op} produced non-finite values")
    return m


def matmul(a, b):
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return _check_finite(a @ b, "matmul")


def relu(a):
    return np.maximum(as_matrix(a), 0.0)


def relu_batch(a):
    """Elementwise ``max(0, x)`` for arrays of any rank."""
    return np.maximum(a, 0.0)


def row_softmax(a):
    """Softmax along each row, shifted by the row maximum first."""
    a = as_matrix(a)
    z = np.exp(a - a.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def log_row_softmax(a):
    a = as_matrix(a)
    shifted = a - a.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def scale_rows(a, d):
    a = as_matrix(a)
    d = np.asarray(d, dtype=np.float64).ravel()
    if d.shape[0] != a.shape[0]:
        raise ShapeError(f"{d.shape[0]} row factors for a matrix of shape {a.shape}")
    return _check_finite(a * d[:, None], "scale_rows")


def safe_power(d, p):
    """``d**p`` elementwise, with 0 wherever ``d == 0`` (pseudo-inverse convention)."""
    d = np.asarray(d, dtype=np.float64)
    out = np.zeros_like(d)
    nz = d > 0
    out[nz] = d[nz] ** p
    return out
