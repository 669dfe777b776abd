"""Input validation helpers shared by the estimators."""
import numpy as np
from sklearn.utils import check_array

from .exceptions import ShapeError


def check_windows(X, n_samples=None):
    """Coerce stacked windows to a float array of shape (n_windows, 2, n_samples)."""
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float64)
    if X.ndim == 2 and X.shape[0] == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1] != 2:
        raise ShapeError(f"expected windows of shape (n, 2, n_samples), got {X.shape}")
    if X.shape[2] < 2:
        raise ShapeError("windows need at least 2 samples")
    if n_samples is not None and X.shape[2] != n_samples:
        raise ShapeError(f"expected {n_samples} samples per signal, got {X.shape[2]}")
    return X


def check_images(X, size=None):
    """Coerce images to a float array of shape (n_images, height, width).

    Accepts a single 2-D image, a 3-D stack or a stack with a singleton
    channel axis.
    """
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    elif X.ndim == 4 and X.shape[1] == 1:
        X = X[:, 0]
    if X.ndim != 3:
        raise ShapeError(f"expected images of shape (n, h, w), got {X.shape}")
    if size is not None and X.shape[1:] != tuple(size):
        raise ShapeError(f"expected {tuple(size)} images, got {X.shape[1:]}")
    return X


def check_labels(y, n):
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != n:
        raise ShapeError(f"expected {n} labels, got shape {y.shape}")
    return y
