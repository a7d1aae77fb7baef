"""Input validation helpers used by the estimators and the pipeline."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import DataError


def as_vector(x, name: str, min_len: int = 0) -> np.ndarray:
    """Coerce to a finite 1-D float array."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise DataError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size < min_len:
        raise DataError(f"{name} needs at least {min_len} values, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    return arr


def as_matrix(x, name: str) -> np.ndarray:
    """Coerce to a finite 2-D float array."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 2:
        raise DataError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    return arr


def same_length(a: np.ndarray, b: np.ndarray, name_a: str, name_b: str) -> None:
    if len(a) != len(b):
        raise DataError(
            f"{name_a} and {name_b} must have equal length ({len(a)} vs {len(b)})"
        )


def check_subset(values: Sequence[str], allowed: Sequence[str], name: str) -> None:
    bad = [v for v in values if v not in allowed]
    if bad:
        raise DataError(
            f"{name} contains unknown entries {bad}; accepted: {sorted(allowed)}"
        )


def readonly(arr: np.ndarray) -> np.ndarray:
    """Return a C-contiguous copy flagged read-only (immutability convention)."""
    out = np.array(arr, dtype=float, copy=True)
    out.setflags(write=False)
    return out
