"""Input validation helpers shared by the functional API and the estimators."""

import numpy as np
from sklearn.utils import check_array

from .exceptions import SpaceMismatch

NORMALIZATION_ATOL = 1e-12


def check_distribution(weights, n_states=None, *, renormalize=True, name="distribution"):
    """Validate a probability vector and return it as a float array.

    Parameters
    ----------
    weights : array-like or object with a ``weights`` attribute
    n_states : int, optional
        Expected length; a mismatch raises :class:`SpaceMismatch`.
    renormalize : bool
        Divide by the sum so the result sums to one to machine precision.
        The input must still be normalized within 1e-8 (pure rounding noise);
        anything further off is rejected.
    """
    weights = getattr(weights, "weights", weights)
    p = check_array(np.asarray(weights, dtype=float), ensure_2d=False, input_name=name)
    if p.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {p.shape}")
    if n_states is not None and p.shape[0] != n_states:
        raise SpaceMismatch(f"{name} has {p.shape[0]} entries, expected {n_states}")
    if np.any(p < 0):
        raise ValueError(f"{name} has negative entries")
    total = p.sum()
    tol = 1e-8 if renormalize else NORMALIZATION_ATOL
    if abs(total - 1.0) > tol:
        raise ValueError(f"{name} sums to {total!r}, not 1")
    return p / total if renormalize else p


def check_feature_table(table, n_states=None):
    """Return a finite ``(n_states, n_features)`` float table."""
    F = np.asarray(table, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    if F.ndim != 2:
        raise ValueError(f"feature table must be 2-D, got shape {F.shape}")
    if F.shape[1] > 0:
        F = check_array(F, ensure_min_features=0, input_name="features")
    elif not np.all(np.isfinite(F)):
        raise ValueError("feature values must be finite")
    if n_states is not None and F.shape[0] != n_states:
        raise SpaceMismatch(f"feature table has {F.shape[0]} rows, expected {n_states}")
    return F


def check_samples(X, n_states):
    """Return integer state indices from a 1-D array or single column."""
    X = np.asarray(X)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValueError("samples must be state indices in a single column")
        X = X[:, 0]
    X = check_array(X.reshape(-1, 1), dtype=None, input_name="X")[:, 0]
    if not np.all(np.equal(np.mod(X, 1), 0)):
        raise ValueError("samples must be integer state indices")
    X = X.astype(int)
    if X.size and (X.min() < 0 or X.max() >= n_states):
        raise SpaceMismatch(f"sample indices must lie in [0, {n_states})")
    return X


def empirical_distribution(samples, n_states):
    samples = check_samples(samples, n_states)
    if samples.size == 0:
        raise ValueError("dataset is empty")
    return np.bincount(samples, minlength=n_states) / samples.size


def check_positive(value, name):
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be positive, got {value!r}")
    return float(value)
