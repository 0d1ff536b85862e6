"""Input validation helpers used by the estimator-facing API."""

import numpy as np

from .exceptions import ShapeError


def as_float_array(X, ndim: int | None = None, name: str = "X") -> np.ndarray:
    """Coerce to a C-contiguous float64 array, checking finiteness and rank."""
    arr = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or infinite values")
    if ndim is not None and arr.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    return arr


def as_label_array(y, num_classes: int | None = None, name: str = "y") -> np.ndarray:
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        rounded = np.rint(np.asarray(arr, dtype=np.float64)).astype(np.int64)
        if not np.array_equal(rounded, np.asarray(arr, dtype=np.float64)):
            raise ValueError(f"{name} must contain integer class ids")
        arr = rounded
    arr = arr.astype(np.int64)
    if num_classes is not None and ((arr < 0).any() or (arr >= num_classes).any()):
        raise ValueError(f"{name} has labels outside [0, {num_classes})")
    return arr


def check_consistent_length(*arrays) -> int:
    lengths = {len(a) for a in arrays}
    if len(lengths) != 1:
        raise ShapeError(f"inconsistent first dimensions: {sorted(lengths)}")
    return lengths.pop()


def check_square_matrix(S, name: str = "S") -> np.ndarray:
    arr = as_float_array(S, ndim=2, name=name)
    if arr.shape[0] != arr.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {arr.shape}")
    return arr


def check_positive(value: float, name: str) -> float:
    value = float(value)
    if not value > 0:
        raise ValueError(f"{name} must be > 0, got {value}")
    return value


def check_fraction(value: float, name: str) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return value
