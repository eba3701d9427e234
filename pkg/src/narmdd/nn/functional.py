"""Array-level kernels on plain float64 matrices."""
from __future__ import annotations

import numpy as np

from .tensor import ShapeError, log_softmax_kernel, sigmoid_kernel, softmax_kernel


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite values")
    return m


def matmul(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch {a.shape} x {b.shape}")
    return a @ b


def sigmoid(x):
    return sigmoid_kernel(np.asarray(x, dtype=np.float64))


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def softmax_rows(m) -> np.ndarray:
    return softmax_kernel(as_matrix(m), axis=1)


def log_softmax_rows(m) -> np.ndarray:
    return log_softmax_kernel(as_matrix(m), axis=1)
