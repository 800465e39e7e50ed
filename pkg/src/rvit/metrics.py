"""Task metrics: macro-F1 for multi-label, mean IoU for segmentation."""

from __future__ import annotations

import numpy as np


def macro_f1(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """Unweighted mean of per-class F1 over binary multi-hot arrays.

    A class with no true and no predicted positives contributes 0, the
    all-negative-predictor convention.
    """
    y_true = np.asarray(y_true).astype(bool)
    y_pred = np.asarray(y_pred).astype(bool)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"shape mismatch: {y_true.shape} vs {y_pred.shape}")
    tp = (y_true & y_pred).sum(axis=0).astype(np.float64)
    fp = (~y_true & y_pred).sum(axis=0)
    fn = (y_true & ~y_pred).sum(axis=0)
    denom = 2 * tp + fp + fn
    f1 = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    return float(f1.mean())


def mean_iou(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int) -> float:
    """Mean intersection-over-union over classes present in truth or prediction."""
    y_true = np.asarray(y_true).ravel()
    y_pred = np.asarray(y_pred).ravel()
    if y_true.shape != y_pred.shape:
        raise ValueError("segmentation maps must have identical extents")
    ious = []
    for c in range(n_classes):
        t, p = y_true == c, y_pred == c
        union = (t | p).sum()
        if union == 0:
            continue  # absent everywhere: excluded rather than counted as 0
        ious.append((t & p).sum() / union)
    return float(np.mean(ious)) if ious else 1.0
