"""
Shared error hierarchy and array coercion helpers for the value types.
"""

from typing import Any, Optional

import numpy as np


class OTPropError(Exception):
    """Base class for every error raised by otprop."""
    pass


class DistributionError(OTPropError):
    """Invalid atoms or weights, or mismatched dimensions."""
    pass


class AtomBudgetExceededError(DistributionError):
    """An operation would create more atoms than the configured budget."""
    pass


class CostError(OTPropError):
    """Invalid transportation cost descriptor or composition."""
    pass


def as_matrix(value: Any, name: str = "matrix", rows: Optional[int] = None,
              cols: Optional[int] = None) -> np.ndarray:
    """
    Coerce a nested list / array / scalar into a 2-D float matrix.

    Scalars become 1x1 matrices. Raises ValueError on ragged input or
    shape mismatch.
    """
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if rows is not None and arr.shape[0] != rows:
        raise ValueError(f"{name} must have {rows} rows, got {arr.shape[0]}")
    if cols is not None and arr.shape[1] != cols:
        raise ValueError(f"{name} must have {cols} columns, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_vector(value: Any, name: str = "vector", dim: Optional[int] = None) -> np.ndarray:
    """Coerce a scalar or sequence into a 1-D float vector."""
    arr = np.atleast_1d(np.array(value, dtype=np.float64))
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ValueError(f"{name} must have length {dim}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def frozen(arr: np.ndarray) -> np.ndarray:
    """Return a read-only copy of arr."""
    out = np.array(arr, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out
