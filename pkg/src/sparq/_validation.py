"""Input validation helpers shared across the package."""

from __future__ import annotations

import operator

import numpy as np


def check_gray_image(image, name: str = "image") -> np.ndarray:
    """Validate and return a 2-D uint8 intensity image.

    Accepts any integer array whose values fit in [0, 255]; the returned
    array is always uint8.
    """
    arr = np.asarray(image)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D intensity array, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if arr.dtype != np.uint8:
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError(f"{name} must hold 8-bit integer intensities, got dtype {arr.dtype}")
        lo, hi = int(arr.min()), int(arr.max())
        if lo < 0 or hi > 255:
            raise ValueError(f"{name} intensities must lie in [0, 255], got [{lo}, {hi}]")
        arr = arr.astype(np.uint8)
    return arr


def check_patch_side(patch_side, shape, name: str = "patch_side") -> int:
    side = operator.index(patch_side)
    if side < 1:
        raise ValueError(f"{name} must be positive, got {side}")
    if side > min(shape):
        raise ValueError(f"{name}={side} exceeds the image extent {shape}")
    return side


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "images") -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what} must share dimensions, got {a.shape} and {b.shape}")


def check_fraction(fraction, name: str = "fraction") -> float:
    value = float(fraction)
    if not 0.0 < value <= 1.0:
        raise ValueError(f"{name} must lie in (0, 1], got {value}")
    return value
