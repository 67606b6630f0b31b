"""Small input-validation helpers shared by the estimators."""
from __future__ import annotations

import math
from numbers import Integral, Real

import numpy as np

from .exceptions import DimensionError


def check_finite_scalar(value, name: str) -> float:
    if not isinstance(value, Real) or not math.isfinite(float(value)):
        raise ValueError(f"{name} must be a finite real number, got {value!r}")
    return float(value)


def check_positive(value, name: str) -> float:
    value = check_finite_scalar(value, name)
    if value <= 0:
        raise ValueError(f"{name} must be > 0, got {value}")
    return value


def check_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, Integral):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_fraction(value, name: str) -> float:
    value = check_finite_scalar(value, name)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return value


def check_array_2d(arr, name: str = "array", *, dtype=None, finite: bool = True) -> np.ndarray:
    """Return ``arr`` as a 2D ndarray, rejecting empty or non-finite input."""
    out = np.asarray(arr, dtype=dtype)
    if out.ndim != 2:
        raise DimensionError(f"{name} must be 2D, got shape {out.shape}")
    if out.shape[0] < 1 or out.shape[1] < 1:
        raise DimensionError(f"{name} must be non-empty, got shape {out.shape}")
    if finite and not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains NaN or Inf")
    return out


def check_divisible(shape: tuple[int, ...], m: int, name: str = "array") -> None:
    if shape[0] % m or shape[1] % m:
        raise DimensionError(f"{name} shape {shape} is not divisible by {m}")


def check_same_shape(a: np.ndarray, b: np.ndarray, names: str = "inputs") -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{names} differ in shape: {a.shape} vs {b.shape}")
