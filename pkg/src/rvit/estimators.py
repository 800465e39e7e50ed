"""Scikit-learn style estimators wrapping the training harness.

``RvitClassifier`` and ``RvitSegmenter`` are fit/predict front ends over
array inputs - images of shape (n, H, W, C) - with ``get_params`` /
``set_params`` from :class:`sklearn.base.BaseEstimator`, so they compose
with pipelines, grid search, and cloning. ``PatchMasker`` exposes the
masking strategies as a stateless transformer that zeroes masked patches in
image space, which is also how mask layouts are visualized.

Masking during ``fit`` follows the training-time setting; ``evaluate`` (and
``PatchMasker`` at any time) applies masking at inference instead.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import harness, masking, validation
from .metrics import macro_f1, mean_iou
from .patches import partition, reassemble
from .synthdata import Dataset


def _as_dataset(X: np.ndarray, class_labels=None, seg_labels=None, n_classes=0) -> Dataset:
    return Dataset(
        images=X,
        keys=[f"x-{i:06d}" for i in range(X.shape[0])],
        class_labels=class_labels,
        seg_labels=seg_labels,
        n_classes=n_classes,
    )


class _RvitBase(BaseEstimator):
    _task = ""

    def __init__(
        self,
        patch_size=8,
        width=64,
        depth=4,
        heads=4,
        mlp_ratio=4.0,
        strategy="ms1",
        train_ratio=1.0,
        tau=None,
        epochs=5,
        batch_size=32,
        learning_rate=0.1,
        seed=0,
    ):
        self.patch_size = patch_size
        self.width = width
        self.depth = depth
        self.heads = heads
        self.mlp_ratio = mlp_ratio
        self.strategy = strategy
        self.train_ratio = train_ratio
        self.tau = tau
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed

    def _experiment_config(self, X: np.ndarray) -> harness.ExperimentConfig:
        if self.strategy not in masking.STRATEGIES:
            raise ValueError(
                f"strategy must be one of {masking.STRATEGIES}, got {self.strategy!r}"
            )
        return harness.ExperimentConfig(
            task=self._task,
            strategy=self.strategy,
            train_ratio=self.train_ratio,
            tau=self.tau,
            width=self.width,
            depth=self.depth,
            heads=self.heads,
            mlp_ratio=self.mlp_ratio,
            patch_size=self.patch_size,
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.seed,
            image_size=X.shape[1],
            channels=X.shape[3],
        )

    def _fit_dataset(self, ds: Dataset, X: np.ndarray):
        self.model_ = harness.train_model(self._experiment_config(X), ds)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        self.image_shape_ = X.shape[1:]
        return self

    def evaluate(self, X, y, retention=1.0, strategy=None, tau=None) -> float:
        """Metric under inference-time masking (full input by default)."""
        check_is_fitted(self, "model_")
        ds = self._eval_dataset(X, y)
        _, value = harness.evaluate_model(
            self.model_, ds, strategy or self.strategy, retention, tau
        )
        return value


class RvitClassifier(_RvitBase):
    """Multi-label image classifier with redundancy-aware patch masking.

    ``fit(X, y)`` takes images (n, H, W, C) and multi-hot targets (n, K);
    ``predict_proba`` returns per-class sigmoid probabilities and ``score``
    the macro-F1 at threshold 0.5.
    """

    _task = "classification"

    def fit(self, X, y):
        X = validation.check_images(X, self.patch_size)
        y = validation.check_multilabel(y, X.shape[0])
        self.n_classes_ = y.shape[1]
        ds = _as_dataset(X, class_labels=y, n_classes=y.shape[1])
        return self._fit_dataset(ds, X)

    def _eval_dataset(self, X, y) -> Dataset:
        X = validation.check_images(X, self.patch_size)
        y = validation.check_multilabel(y, X.shape[0])
        return _as_dataset(X, class_labels=y, n_classes=self.n_classes_)

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = validation.check_images(X, self.patch_size)
        ds = _as_dataset(X, n_classes=self.n_classes_)
        return harness.predict(self.model_, ds)

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) > 0.5).astype(np.uint8)

    def score(self, X, y) -> float:
        y = validation.check_multilabel(y, np.asarray(X).shape[0])
        return macro_f1(y, self.predict(X))


class RvitSegmenter(_RvitBase):
    """Dense semantic segmentation via scatter-back decoding.

    ``fit(X, y)`` takes images (n, H, W, C) and per-pixel class maps
    (n, H, W); ``predict`` returns argmax class maps and ``score`` the mean
    IoU over classes.
    """

    _task = "segmentation"

    def fit(self, X, y):
        X = validation.check_images(X, self.patch_size)
        y = validation.check_segmentation_maps(y, X.shape[0], X.shape[1:3])
        self.n_classes_ = int(y.max()) + 1
        ds = _as_dataset(X, seg_labels=y, n_classes=self.n_classes_)
        return self._fit_dataset(ds, X)

    def _eval_dataset(self, X, y) -> Dataset:
        X = validation.check_images(X, self.patch_size)
        y = validation.check_segmentation_maps(y, X.shape[0], X.shape[1:3])
        return _as_dataset(X, seg_labels=y, n_classes=self.n_classes_)

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = validation.check_images(X, self.patch_size)
        ds = _as_dataset(X, n_classes=self.n_classes_)
        return harness.predict(self.model_, ds)

    def score(self, X, y) -> float:
        X = validation.check_images(X, self.patch_size)
        y = validation.check_segmentation_maps(y, X.shape[0], X.shape[1:3])
        return mean_iou(y, self.predict(X), self.n_classes_)


class PatchMasker(BaseEstimator, TransformerMixin):
    """Stateless transformer that zeroes masked patches in image space.

    Useful for visual inspection of what each strategy removes and for
    feeding masked images to third-party models. ``fit`` is a no-op.
    """

    def __init__(self, strategy="ms1", ratio=0.25, tau=None, patch_size=8, key_prefix="x"):
        self.strategy = strategy
        self.ratio = ratio
        self.tau = tau
        self.patch_size = patch_size
        self.key_prefix = key_prefix

    def fit(self, X, y=None):
        return self

    def get_plans(self, X) -> list[masking.RetentionPlan]:
        X = validation.check_images(X, self.patch_size)
        plans = []
        for i, img in enumerate(X):
            grid = partition(img.astype(np.float64), self.patch_size)
            if self.strategy == "ms1":
                plans.append(
                    masking.plan_uniform_random(
                        f"{self.key_prefix}-{i:06d}", self.ratio, grid.n_patches
                    )
                )
            elif self.strategy == "ms2":
                plans.append(
                    masking.plan_diversity(masking.similarity_matrix(grid), self.ratio)
                )
            elif self.strategy == "ms3":
                if self.tau is None:
                    raise ValueError("strategy ms3 needs tau")
                plans.append(
                    masking.plan_thresholded(masking.similarity_matrix(grid), self.tau)
                )
            else:
                raise ValueError(f"unknown strategy {self.strategy!r}")
        return plans

    def transform(self, X) -> np.ndarray:
        X = validation.check_images(X, self.patch_size)
        plans = self.get_plans(X)
        out = np.empty_like(X)
        for i, (img, plan) in enumerate(zip(X, plans)):
            grid = partition(img.astype(np.float64), self.patch_size)
            grid.vectors[plan.mask == 0] = 0.0
            out[i] = reassemble(grid).astype(X.dtype)
        return out
