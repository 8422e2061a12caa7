"""Input validation helpers shared by the public entry points."""

from __future__ import annotations

import numpy as np

from .errors import ArgumentError

__all__ = ["as_float_array", "check_shape", "check_finite", "check_rotation_matrix"]


def as_float_array(x, name: str) -> np.ndarray:
    try:
        return np.asarray(x, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ArgumentError(f"{name}: expected a numeric array") from exc


def check_shape(arr: np.ndarray, shape: tuple[int | None, ...], name: str) -> np.ndarray:
    """Validate dimensionality and fixed axes; ``None`` entries are free."""
    if arr.ndim != len(shape) or any(
            s is not None and arr.shape[i] != s for i, s in enumerate(shape)):
        want = tuple("*" if s is None else s for s in shape)
        raise ArgumentError(f"{name}: expected shape {want}, got {arr.shape}")
    return arr


def check_finite(arr: np.ndarray, name: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise ArgumentError(f"{name}: contains NaN or Inf")
    return arr


def check_rotation_matrix(r: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Require an orthonormal 3x3 rotation within ``tol`` (inf-norm)."""
    r = check_shape(as_float_array(r, "rotation"), (3, 3), "rotation")
    if np.abs(r.T @ r - np.eye(3)).max() > tol:
        raise ArgumentError("rotation: matrix is not orthonormal")
    return r
