"""Input validation for the estimator API."""

from __future__ import annotations

import numpy as np


def check_images(X, patch_size: int | None = None) -> np.ndarray:
    """Validate a batch of images; returns (n, H, W, C) float32.

    Accepts (n, H, W) single-channel input and adds the channel axis.
    """
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[..., None]
    if X.ndim != 4:
        raise ValueError(
            f"expected images of shape (n, H, W, C) or (n, H, W), got {X.shape}"
        )
    if X.shape[0] == 0:
        raise ValueError("empty image batch")
    if not np.isfinite(X).all():
        raise ValueError("images contain non-finite values")
    if patch_size is not None:
        h, w = X.shape[1], X.shape[2]
        if h % patch_size != 0 or w % patch_size != 0:
            raise ValueError(
                f"image extents {h}x{w} not divisible by patch size {patch_size}"
            )
    return X.astype(np.float32, copy=False)


def check_multilabel(y, n_samples: int) -> np.ndarray:
    """Validate multi-hot targets; returns (n, K) uint8."""
    y = np.asarray(y)
    if y.ndim != 2 or y.shape[0] != n_samples:
        raise ValueError(
            f"expected (n_samples, n_classes) multi-hot targets, got {y.shape}"
        )
    if not np.isin(y, (0, 1)).all():
        raise ValueError("multi-hot targets must contain only 0 and 1")
    return y.astype(np.uint8)


def check_segmentation_maps(y, n_samples: int, image_hw: tuple[int, int]) -> np.ndarray:
    """Validate per-pixel class maps; returns (n, H, W) uint8 and the class count."""
    y = np.asarray(y)
    if y.ndim != 3 or y.shape[0] != n_samples or y.shape[1:] != tuple(image_hw):
        raise ValueError(
            f"expected (n_samples, {image_hw[0]}, {image_hw[1]}) class maps, "
            f"got {y.shape}"
        )
    if y.min() < 0 or not np.issubdtype(y.dtype, np.integer):
        raise ValueError("segmentation maps must hold non-negative class indices")
    return y.astype(np.uint8)
