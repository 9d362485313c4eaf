"""Input validation helpers used across modules and estimators."""
from __future__ import annotations

import numpy as np

from .exceptions import (
    IndexOutOfRangeError,
    NonPositivePredictionError,
    NotNormalizedError,
    ShapeMismatchError,
)


def check_index(value: int, upper: int, name: str = "index") -> int:
    """Validate a 1-based index in [1, upper]."""
    value = int(value)
    if not 1 <= value <= upper:
        raise IndexOutOfRangeError(f"{name} {value} outside [1, {upper}]")
    return value


def as_prob_array(x, name: str = "array") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        raise ShapeMismatchError(f"{name} must be at least 1-dimensional")
    return arr


def check_prob_vector(p, size: int | None = None, tol: float = 1e-6,
                      name: str = "p", require_positive: bool = False) -> np.ndarray:
    """Validate a probability vector: shape, normalization, sign."""
    arr = as_prob_array(p, name)
    if arr.ndim != 1:
        raise ShapeMismatchError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise ShapeMismatchError(f"{name} must have length {size}, got {arr.shape[0]}")
    if require_positive:
        if np.any(arr <= 0.0):
            raise NonPositivePredictionError(f"{name} has entries <= 0")
    elif np.any(arr < 0.0):
        raise NotNormalizedError(f"{name} has negative entries")
    total = float(arr.sum())
    if abs(total - 1.0) > tol:
        raise NotNormalizedError(f"{name} sums to {total!r}, expected 1 within {tol}")
    return arr


def check_row_stochastic(mat, width: int | None = None, tol: float = 1e-6,
                         name: str = "matrix") -> np.ndarray:
    """Validate a matrix whose rows are probability vectors."""
    arr = as_prob_array(mat, name)
    if arr.ndim != 2:
        raise ShapeMismatchError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if width is not None and arr.shape[1] != width:
        raise ShapeMismatchError(f"{name} must have {width} columns, got {arr.shape[1]}")
    if np.any(arr < 0.0):
        raise NotNormalizedError(f"{name} has negative entries")
    sums = arr.sum(axis=1)
    worst = float(np.max(np.abs(sums - 1.0))) if arr.shape[0] else 0.0
    if worst > tol:
        raise NotNormalizedError(f"{name} rows deviate from sum 1 by up to {worst!r}")
    return arr


def check_same_length(a, b, name_a: str = "a", name_b: str = "b") -> None:
    if len(a) != len(b):
        raise ShapeMismatchError(
            f"{name_a} has length {len(a)} but {name_b} has length {len(b)}"
        )


def check_fitted(estimator, attributes: tuple[str, ...]) -> None:
    """Raise if the estimator has not been fitted yet."""
    missing = [a for a in attributes if not hasattr(estimator, a)]
    if missing:
        raise RuntimeError(
            f"{type(estimator).__name__} is not fitted; call fit() first "
            f"(missing {', '.join(missing)})"
        )
