"""Small input-validation helpers shared by the public functions."""

import math
import numbers

import numpy as np


def check_level(tau, name="tau"):
    """Return ``tau`` as float, raising ``ValueError`` unless it lies in (0, 1)."""
    tau = float(tau)
    if not 0.0 < tau < 1.0:
        raise ValueError(f"{name} must lie in the open interval (0, 1), got {tau!r}")
    return tau


def check_positive(value, name):
    value = float(value)
    if not (value > 0.0 and math.isfinite(value)):
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return value


def check_probability(value, name):
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
    return value


def check_even_n(n, name="n"):
    if isinstance(n, bool) or not isinstance(n, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {type(n).__name__}")
    if n < 2 or n % 2:
        raise ValueError(f"{name} must be an even integer >= 2, got {n}")
    return int(n)


def check_index(i, size, name):
    if isinstance(i, bool) or not isinstance(i, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {type(i).__name__}")
    if not 0 <= i < size:
        raise IndexError(f"{name}={i} out of range [0, {size})")
    return int(i)


def as_thetas(x):
    """Coerce a distribution or array-like into a float array with an even last axis."""
    thetas = getattr(x, "thetas", x)
    thetas = np.asarray(thetas, dtype=float)
    if thetas.ndim == 0:
        raise ValueError("quantile estimates must have at least one axis")
    check_even_n(thetas.shape[-1], "number of quantiles")
    return thetas


def first_argmax(scores, axis=-1):
    """Argmax with ties (up to float round-off) resolved toward the lowest index."""
    scores = np.asarray(scores, dtype=float)
    best = np.max(scores, axis=axis, keepdims=True)
    tol = 1e-12 * np.maximum(1.0, np.abs(best))
    return np.argmax(scores >= best - tol, axis=axis)
