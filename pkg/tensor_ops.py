"""
Dense float64 vector and matrix helpers
The numeric substrate shared by the encoder, the index and the aggregators.

Vectors are 1-D float64 numpy arrays, matrices are 2-D float64 arrays stored
row-major (C order). Every value returned here is read-only and finite.
"""
from typing import Iterable, Union

import numpy as np

from errors import DegenerateInputError, DimensionError, NumericError

Vec64 = np.ndarray
Mat64 = np.ndarray

ArrayInput = Union[np.ndarray, Iterable[float]]


def _freeze(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def require_finite(array: np.ndarray, what: str = "value") -> np.ndarray:
    """Raise NumericError if any entry is NaN or infinite"""
    if not np.all(np.isfinite(array)):
        bad = int(np.flatnonzero(~np.isfinite(np.ravel(array)))[0])
        raise NumericError(f"non-finite {what} at flat index {bad}")
    return array


def as_vec(values: ArrayInput) -> Vec64:
    """Copy values into a frozen, finite float64 vector"""
    vec = np.array(values, dtype=np.float64, order='C')
    if vec.ndim != 1:
        raise DimensionError(f"expected a vector, got shape {vec.shape}")
    return _freeze(require_finite(vec, "vector entry"))


def as_mat(values: ArrayInput) -> Mat64:
    """Copy values into a frozen, finite, row-major float64 matrix"""
    mat = np.array(values, dtype=np.float64, order='C')
    if mat.ndim != 2:
        raise DimensionError(f"expected a matrix, got shape {mat.shape}")
    return _freeze(require_finite(mat, "matrix entry"))


def _same_length(a: Vec64, b: Vec64):
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")


def dot(a: Vec64, b: Vec64) -> float:
    _same_length(a, b)
    return float(np.dot(a, b))


def l2_norm(a: Vec64) -> float:
    return float(np.sqrt(np.dot(a, a)))


def cosine(a: Vec64, b: Vec64) -> float:
    """Cosine similarity; a zero-norm input is an error, never 0"""
    _same_length(a, b)
    norm_a = l2_norm(a)
    norm_b = l2_norm(b)
    if norm_a == 0.0 or norm_b == 0.0:
        raise DegenerateInputError("cosine of a zero-norm vector is undefined")
    return float(np.dot(a, b)) / (norm_a * norm_b)


def matvec(m: Mat64, x: Vec64) -> Vec64:
    if m.ndim != 2 or m.shape[1] != x.shape[0]:
        raise DimensionError(f"cannot multiply {m.shape} matrix by length-{x.shape[0]} vector")
    return _freeze(require_finite(m @ x, "matvec result"))


def axpy(alpha: float, x: Vec64, y: Vec64) -> Vec64:
    """Return y + alpha * x as a new vector"""
    _same_length(x, y)
    return _freeze(require_finite(y + alpha * x, "axpy result"))
