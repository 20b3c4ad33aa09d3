"""Input checks shared by the estimators and metric entry points."""

import numpy as np
from sklearn.utils.validation import check_array


def check_features(X, n_features=None):
    X = check_array(X, dtype=np.float64, ensure_all_finite=True)
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"X has {X.shape[1]} features, expected {n_features}")
    return X


def check_logits(z):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = z[None, :]
    if z.ndim != 2 or z.shape[0] == 0:
        raise ValueError(f"logits must be a non-empty (n_samples, n_classes) array, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits contain non-finite values")
    return z


def check_labels(y, n_samples=None, n_classes=None):
    """Integer class indices in ``[0, n_classes)``."""
    y = np.asarray(y)
    if y.ndim != 1:
        y = y.reshape(-1)
    if y.size and not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.isfinite(y)) or np.any(y != np.round(y)):
            raise ValueError("labels must be integer class indices")
    y = y.astype(np.int64)
    if n_samples is not None and y.shape[0] != n_samples:
        raise ValueError(f"got {y.shape[0]} labels for {n_samples} samples")
    if np.any(y < 0) or (n_classes is not None and np.any(y >= n_classes)):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    return y
