"""Small input-validation helpers in the spirit of ``sklearn.utils.validation``."""

import numbers

import numpy as np

from .exceptions import NonFinite


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise TypeError(f"{name} must be a real number, got {type(value).__name__}")
    if not np.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    if strict and value <= 0:
        raise ValueError(f"{name} must be > 0, got {value}")
    if not strict and value < 0:
        raise ValueError(f"{name} must be >= 0, got {value}")
    return float(value)


def check_interval(value, name, low, high, closed_low=True, closed_high=True):
    value = float(value)
    lo_ok = value >= low if closed_low else value > low
    hi_ok = value <= high if closed_high else value < high
    if not (lo_ok and hi_ok):
        lb = "[" if closed_low else "("
        rb = "]" if closed_high else ")"
        raise ValueError(f"{name} must lie in {lb}{low}, {high}{rb}, got {value}")
    return value


def check_count(value, name, minimum=1):
    if not isinstance(value, numbers.Integral) or isinstance(value, bool):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_finite_array(values, name="values", ndim=None):
    arr = np.asarray(values, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFinite(f"{name} contains NaN or infinite entries")
    return arr


def check_points(points, name="points"):
    """Return ``points`` as a float array of shape (n, 3)."""
    arr = check_finite_array(points, name)
    if arr.ndim == 1 and arr.shape[0] == 3:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {arr.shape}")
    return arr
