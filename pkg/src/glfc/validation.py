"""Input checks for the estimator API."""

from __future__ import annotations

import numpy as np


def check_slices(X, name: str = "X") -> np.ndarray:
    """Return ``X`` as a float64 stack of 2-D HU slices, shape [n, H, W].

    A single 2-D slice is promoted to a stack of one.
    """
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim == 4 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 3:
        raise ValueError(f"{name} must be a 2-D slice or a stack [n, H, W], got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or infinite values")
    return arr


def check_paired(X, y):
    X = check_slices(X, "X")
    y = check_slices(y, "y")
    if X.shape != y.shape:
        raise ValueError(f"X {X.shape} and y {y.shape} must have the same shape")
    return X, y
