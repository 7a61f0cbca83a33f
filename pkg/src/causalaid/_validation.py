"""Input validation shared by the learners and the ATE estimators."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, check_consistent_length


def check_features(X, *, allow_empty: bool = True) -> np.ndarray:
    """2-D float64 array with finite entries; zero columns allowed by default."""
    X = np.asarray(X, dtype=float) if not hasattr(X, "to_numpy") else X.to_numpy(dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim == 2 and X.shape[1] == 0:
        if not allow_empty:
            raise ValueError("at least one feature column is required")
        return np.ascontiguousarray(X)
    return check_array(X, dtype=np.float64, ensure_min_samples=1, order="C")


def check_target(y, name: str = "y") -> np.ndarray:
    y = check_array(np.asarray(y, dtype=float), ensure_2d=False, dtype=np.float64)
    if y.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    return y


def check_binary(t, name: str = "treatment") -> np.ndarray:
    t = check_target(t, name)
    if not np.all((t == 0) | (t == 1)):
        raise ValueError(f"{name} must contain only 0 and 1")
    return t.astype(np.int64)


def check_xty(X, t, y):
    """Validate an (X, treatment, outcome) triple for ATE estimation."""
    X = check_features(X)
    t = check_binary(t)
    y = check_target(y)
    check_consistent_length(X, t, y)
    n1 = int(t.sum())
    n0 = len(t) - n1
    if n1 < 2 or n0 < 2:
        raise ValueError(f"need at least 2 units per arm (treated={n1}, control={n0})")
    return X, t, y
