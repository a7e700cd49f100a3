"""Small input-validation helpers shared across modules."""

from __future__ import annotations

import numpy as np


def as_finite_array(x, name: str, shape: tuple[int, ...] | None = None) -> np.ndarray:
    """Convert to float64, requiring finite values and optionally a shape.

    Shape entries of -1 match any extent.
    """
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite values")
    if shape is not None:
        if arr.ndim != len(shape) or any(s != -1 and s != a for s, a in zip(shape, arr.shape)):
            want = tuple("n" if s == -1 else s for s in shape)
            raise ValueError(f"{name}: expected shape {want}, got {arr.shape}")
    return arr


def check_trajectory(traj, name: str = "trajectory", min_points: int = 2) -> np.ndarray:
    """Validate an (n, 3) trajectory of x, y, height rows."""
    arr = as_finite_array(traj, name, shape=(-1, 3))
    if arr.shape[0] < min_points:
        raise ValueError(f"{name}: needs at least {min_points} points, got {arr.shape[0]}")
    return arr


def check_image(img, name: str = "image") -> np.ndarray:
    """Validate an (H, W, 3) float image with values in [0, 1]."""
    arr = as_finite_array(img, name, shape=(-1, -1, 3))
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name}: values outside [0, 1]")
    return arr


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if int(value) != value or value < minimum:
        raise ValueError(f"{name}: expected an integer >= {minimum}, got {value!r}")
    return int(value)
