"""Input validation for collections of feature sets."""
import numpy as np

from .exceptions import DimensionMismatch, EmptySet, NonFiniteError

__all__ = ["check_sets", "check_set"]


def check_set(X, d=None):
    """Return ``X`` as a finite 2-D float array with ``d`` columns."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise DimensionMismatch(f"a feature set must be 2-D, got shape {X.shape}")
    if X.shape[0] == 0:
        raise EmptySet("feature set has no rows")
    if d is not None and X.shape[1] != d:
        raise DimensionMismatch(f"expected {d} features per row, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteError("feature set contains NaN or inf")
    return X


def check_sets(sets, d=None):
    """Validate a sequence of feature sets sharing one feature width.

    Accepts a list of 2-D arrays or a 3-D array of equal-length sets.
    """
    if isinstance(sets, np.ndarray) and sets.ndim == 3:
        sets = list(sets)
    sets = list(sets)
    if not sets:
        raise EmptySet("no feature sets given")
    out = [check_set(sets[0], d)]
    d = out[0].shape[1]
    out.extend(check_set(X, d) for X in sets[1:])
    return out
