"""Shared input-validation helpers used across the package."""

from __future__ import annotations

import numpy as np


def as_float_array(values, name: str, ndim: int | None = None) -> np.ndarray:
    """Convert to a C-contiguous float64 array and require finite entries."""
    arr = np.ascontiguousarray(values, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_shape(arr: np.ndarray, shape: tuple[int, ...], name: str) -> None:
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")


def check_positive(arr: np.ndarray, name: str, strict: bool = True) -> None:
    bad = arr <= 0 if strict else arr < 0
    if np.any(bad):
        kind = "positive" if strict else "non-negative"
        raise ValueError(f"{name} must be {kind}; offending value {arr[bad].min():g}")


def check_matching_days(days_a, days_b, what: str) -> None:
    if list(days_a) != list(days_b):
        raise ValueError(f"day index mismatch between {what}")
