"""Input validation helpers and the exception types shared across modules."""

import numpy as np


class ValidationError(ValueError):
    """Invalid user input (bad shapes, negative weights, unknown keys...)."""


class CheckFailedError(AssertionError):
    """A certified identity or inequality did not hold within its slack."""

    def __init__(self, check, message):
        super().__init__(f"{check}: {message}")
        self.check = check


class SolverError(RuntimeError):
    """The exact transport solver stopped before reaching optimality."""

    def __init__(self, message, best_bound=None):
        super().__init__(message)
        self.best_bound = best_bound


def check_points(points, dim=None, name="points"):
    """Return ``points`` as a finite float array of shape (n, d).

    A 1D input of length n is read as n points on the real line.
    """
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise ValidationError(f"{name} must be a list of points, got array of ndim {arr.ndim}")
    if dim is not None and arr.shape[1] != dim:
        raise ValidationError(f"{name} have dimension {arr.shape[1]}, expected {dim}")
    bad = np.flatnonzero(~np.isfinite(arr).all(axis=1))
    if bad.size:
        raise ValidationError(f"{name}[{bad[0]}] has non-finite coordinates")
    return arr


def check_ragged_points(points, name="atoms"):
    """Like :func:`check_points` but reports the first point of the wrong length."""
    if isinstance(points, np.ndarray):
        return check_points(points, name=name)
    rows = [np.atleast_1d(np.asarray(p, dtype=float)) for p in points]
    if not rows:
        raise ValidationError(f"{name} is empty")
    dim = rows[0].shape[0]
    for i, row in enumerate(rows):
        if row.ndim != 1 or row.shape[0] != dim:
            raise ValidationError(f"{name}[{i}] has dimension {row.shape[0]}, expected {dim}")
    return check_points(np.vstack(rows), name=name)


def check_weights(weights, n, name="weights"):
    w = np.asarray(weights, dtype=float).ravel()
    if w.shape[0] != n:
        raise ValidationError(f"{name} has length {w.shape[0]} but there are {n} atoms")
    bad = np.flatnonzero(~np.isfinite(w))
    if bad.size:
        raise ValidationError(f"{name}[{bad[0]}] is not finite")
    neg = np.flatnonzero(w < 0)
    if neg.size:
        raise ValidationError(f"{name}[{neg[0]}] = {w[neg[0]]} is negative")
    if not w.sum() > 0:
        raise ValidationError(f"{name} are all zero")
    return w


def check_finite_values(values, name="values"):
    v = np.asarray(values, dtype=float)
    bad = np.flatnonzero(~np.isfinite(v.ravel()))
    if bad.size:
        raise ValidationError(f"{name}[{bad[0]}] is not finite")
    return v


def check_positive(value, name, strict=True):
    value = float(value)
    if not np.isfinite(value) or (value <= 0 if strict else value < 0):
        raise ValidationError(f"{name} must be {'positive' if strict else 'nonnegative'}, got {value}")
    return value
