"""Small input-validation helpers shared by the numeric modules."""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatchError


def as_float_matrix(values, name: str = "matrix") -> np.ndarray:
    matrix = np.asarray(values, dtype=np.float64)
    if matrix.ndim != 2:
        raise DimensionMismatchError(f"{name} must be 2-D, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise ValueError(f"{name} contains non-finite entries")
    return matrix


def check_square(matrix: np.ndarray, name: str = "matrix") -> np.ndarray:
    matrix = as_float_matrix(matrix, name)
    if matrix.shape[0] != matrix.shape[1]:
        raise DimensionMismatchError(f"{name} must be square, got {matrix.shape}")
    return matrix


def check_chain(*shapes: tuple[int, int]) -> None:
    """Check that consecutive (rows, cols) shapes are multiplication-compatible."""
    for left, right in zip(shapes, shapes[1:]):
        if left[1] != right[0]:
            raise DimensionMismatchError(f"cannot chain {left} with {right}")
