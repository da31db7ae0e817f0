"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np


def check_patch_grids(X, name="X") -> np.ndarray:
    """Validate a stack of fused patch grids: [n, h, w, d] float32, finite."""
    X = np.asarray(X)
    if X.ndim != 4:
        raise ValueError(f"{name} must be [n_images, h, w, d], got shape {X.shape}")
    if X.shape[0] < 1:
        raise ValueError(f"{name} must hold at least one image")
    X = X.astype(np.float32, copy=False)
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains NaN or infinite values")
    return X


def check_feature_maps(X, name="X") -> np.ndarray:
    """Validate a stack of backbone maps: [n, c, h, w] float32, finite."""
    X = np.asarray(X)
    if X.ndim != 4:
        raise ValueError(f"{name} must be [n_images, c, h, w], got shape {X.shape}")
    X = X.astype(np.float32, copy=False)
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains NaN or infinite values")
    return X


def check_binary_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n,):
        raise ValueError(f"y must have shape ({n},), got {y.shape}")
    y = y.astype(np.intp)
    bad = set(np.unique(y)) - {0, 1}
    if bad:
        raise ValueError(f"y must be binary 0/1, found values {sorted(bad)}")
    return y


def check_patch_masks(masks, X: np.ndarray) -> np.ndarray:
    """Patch-level defect masks aligned with the grids: [n, h, w] bool."""
    masks = np.asarray(masks)
    expected = X.shape[:3]
    if masks.shape != expected:
        raise ValueError(f"masks must have shape {expected}, got {masks.shape}")
    return masks.astype(bool)
