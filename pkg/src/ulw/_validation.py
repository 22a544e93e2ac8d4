"""Input validation shared by the estimator layer."""

from __future__ import annotations

import numpy as np

from ulw.errors import ShapeError, UsageError


def check_image_batch(x, name: str = "X", *, channels: int = 3) -> np.ndarray:
    """Coerce to a float32 [N,C,H,W] batch in [0, 1].

    Accepts a single [C,H,W] image (promoted to a batch of one) or anything
    array-like with those shapes.  Values outside the unit range or non-finite
    entries are rejected rather than clipped.
    """
    arr = np.asarray(x)
    if arr.dtype == object:
        raise UsageError(f"{name}: ragged or non-numeric input")
    arr = arr.astype(np.float32, copy=False)
    if arr.ndim == 3:
        arr = arr[np.newaxis]
    if arr.ndim != 4:
        raise ShapeError(f"{name}: expected [N,{channels},H,W] or [{channels},H,W], "
                         f"got shape {arr.shape}")
    if arr.shape[1] != channels:
        raise ShapeError(f"{name}: expected {channels} channels, got {arr.shape[1]}")
    if arr.shape[0] == 0 or arr.shape[2] == 0 or arr.shape[3] == 0:
        raise ShapeError(f"{name}: empty batch or zero-sized image, shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise UsageError(f"{name}: contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise UsageError(f"{name}: values must lie in [0, 1], "
                         f"got range [{arr.min():.4g}, {arr.max():.4g}]")
    return arr


def check_matching_batches(x, y, x_name: str = "X", y_name: str = "y") -> tuple:
    """Validate two image batches that must align element by element."""
    xv = check_image_batch(x, x_name)
    yv = check_image_batch(y, y_name)
    if xv.shape != yv.shape:
        raise ShapeError(f"{x_name} and {y_name} must share a shape, "
                         f"got {xv.shape} vs {yv.shape}")
    return xv, yv
