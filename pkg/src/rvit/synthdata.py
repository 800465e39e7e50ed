"""Synthetic imagery with a controllable amount of spatial redundancy.

Each channel is white Gaussian noise convolved with a periodic separable
Gaussian kernel and standardized to unit population variance (each pixel is
N(0, 1) in distribution; per-sample mean and variance still fluctuate, and
those fluctuations are what the classification task keys on). The kernel
width is chosen so the lag-d pixel autocorrelation is approximately
exp(-2 d^2 / lambda^2): ``corr_length=1`` is close to white noise,
``corr_length=H/4`` gives large smooth blobs. That single dial controls how
similar neighboring patches are, which is exactly what the masking
strategies exploit.

Targets derive from channel 0. The segmentation map buckets pixel values at
fixed thresholds (equal-mass normal quantiles by default). The multi-hot
classification label marks a bucket present when it covers at least its
equal share (1/n_classes) of the image: balanced at any correlation length
by symmetry, while literal any-pixel presence would be constant at these
image sizes and carry no signal to learn.

Datasets serialize to a directory: ``meta.json`` plus raw little-endian
``images.bin`` (float32) and ``labels.bin`` (uint8), samples concatenated in
row-major order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.stats import norm

FORMAT_NAME = "rvit-dataset"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class SceneSpec:
    """Generator settings; thresholds default to equal-mass normal quantiles."""

    height: int = 64
    width: int = 64
    channels: int = 3
    corr_length: float = 16.0
    n_classes: int = 4
    thresholds: tuple[float, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.corr_length < 1.0:
            raise ValueError(f"corr_length must be >= 1, got {self.corr_length}")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        th = self.class_thresholds
        if len(th) != self.n_classes - 1 or any(
            b <= a for a, b in zip(th, th[1:])
        ):
            raise ValueError(f"thresholds must be strictly increasing: {th}")

    @property
    def class_thresholds(self) -> tuple[float, ...]:
        if self.thresholds is not None:
            return tuple(self.thresholds)
        qs = np.arange(1, self.n_classes) / self.n_classes
        return tuple(float(t) for t in norm.ppf(qs))


@dataclass
class Dataset:
    """In-memory sample collection; images float32, labels uint8."""

    images: np.ndarray  # (n, H, W, C)
    keys: list[str]
    class_labels: np.ndarray | None = None  # (n, K) multi-hot
    seg_labels: np.ndarray | None = None  # (n, H, W) class indices
    n_classes: int = 0
    corr_length: float = 0.0
    seed: int = 0

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def image_hw(self) -> tuple[int, int]:
        return self.images.shape[1], self.images.shape[2]

    @property
    def channels(self) -> int:
        return self.images.shape[3]

    def labels_for(self, task: str) -> np.ndarray:
        labels = self.class_labels if task == "classification" else self.seg_labels
        if labels is None:
            raise ValueError(f"dataset carries no {task} labels")
        return labels


@lru_cache(maxsize=16)
def _filter_gain(h: int, w: int, sigma: float) -> float:
    """Population std of the filtered field: L2 norm of the impulse response.

    Computed by pushing a unit impulse through the exact same periodic
    filter, so it stays correct whatever kernel truncation scipy applies.
    """
    impulse = np.zeros((h, w))
    impulse[h // 2, w // 2] = 1.0
    response = gaussian_filter(impulse, sigma=sigma, mode="wrap")
    return float(np.sqrt((response**2).sum()))


def _field(rng: np.random.Generator, h: int, w: int, corr_length: float) -> np.ndarray:
    noise = rng.standard_normal((h, w))
    # corr_length/(2*sqrt(2)) makes the filtered covariance ~ exp(-2d^2/L^2)
    sigma = corr_length / (2.0 * np.sqrt(2.0))
    smooth = gaussian_filter(noise, sigma=sigma, mode="wrap")
    # population standardization: unit variance in distribution, so
    # per-sample mean and variance fluctuations remain visible to the tasks
    return smooth / _filter_gain(h, w, sigma)


def sample_key(seed: int, index: int) -> str:
    return f"s{seed}-{index:06d}"


def generate_sample(spec: SceneSpec, index: int) -> tuple[str, np.ndarray, np.ndarray, np.ndarray]:
    """One deterministic sample: (key, pixels, multi-hot label, segmentation map)."""
    rng = np.random.default_rng((spec.seed, index))
    pixels = np.stack(
        [_field(rng, spec.height, spec.width, spec.corr_length) for _ in range(spec.channels)],
        axis=-1,
    )
    seg = np.digitize(pixels[:, :, 0], spec.class_thresholds).astype(np.uint8)
    fractions = np.bincount(seg.ravel(), minlength=spec.n_classes) / seg.size
    multihot = (fractions >= 1.0 / spec.n_classes).astype(np.uint8)
    return sample_key(spec.seed, index), pixels, multihot, seg


def generate_dataset(spec: SceneSpec, count: int) -> Dataset:
    if count < 1:
        raise ValueError("count must be positive")
    images = np.empty((count, spec.height, spec.width, spec.channels), dtype=np.float32)
    class_labels = np.empty((count, spec.n_classes), dtype=np.uint8)
    seg_labels = np.empty((count, spec.height, spec.width), dtype=np.uint8)
    keys = []
    for i in range(count):
        key, pixels, multihot, seg = generate_sample(spec, i)
        keys.append(key)
        images[i] = pixels.astype(np.float32)
        class_labels[i] = multihot
        seg_labels[i] = seg
    return Dataset(
        images=images,
        keys=keys,
        class_labels=class_labels,
        seg_labels=seg_labels,
        n_classes=spec.n_classes,
        corr_length=spec.corr_length,
        seed=spec.seed,
    )


def merge_classes(dataset: Dataset, groups: list[list[int]]) -> Dataset:
    """Coarser target granularity: multi-hot union / segmentation remap."""
    class_labels = None
    if dataset.class_labels is not None:
        class_labels = np.stack(
            [dataset.class_labels[:, g].max(axis=1) for g in groups], axis=1
        ).astype(np.uint8)
    seg_labels = None
    if dataset.seg_labels is not None:
        remap = np.zeros(dataset.n_classes, dtype=np.uint8)
        for coarse, g in enumerate(groups):
            remap[list(g)] = coarse
        seg_labels = remap[dataset.seg_labels]
    return Dataset(
        images=dataset.images,
        keys=list(dataset.keys),
        class_labels=class_labels,
        seg_labels=seg_labels,
        n_classes=len(groups),
        corr_length=dataset.corr_length,
        seed=dataset.seed,
    )


# -- disk format ---------------------------------------------------------------


def write_dataset(dataset: Dataset, path, task: str) -> None:
    """Write one task's view of the dataset to a directory."""
    labels = dataset.labels_for(task)
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "task": task,
        "count": len(dataset),
        "height": dataset.images.shape[1],
        "width": dataset.images.shape[2],
        "channels": dataset.images.shape[3],
        "n_classes": dataset.n_classes,
        "corr_length": dataset.corr_length,
        "seed": dataset.seed,
        "keys": dataset.keys,
        "image_dtype": "f32",
        "label_dtype": "u8",
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2))
    (out / "images.bin").write_bytes(
        np.ascontiguousarray(dataset.images, dtype="<f4").tobytes()
    )
    (out / "labels.bin").write_bytes(
        np.ascontiguousarray(labels, dtype=np.uint8).tobytes()
    )


def _read_exact(path: Path, dtype, shape) -> np.ndarray:
    blob = path.read_bytes()
    expected = int(np.prod(shape)) * np.dtype(dtype).itemsize
    if len(blob) != expected:
        offset = min(len(blob), expected)
        raise ValueError(
            f"{path.name}: expected {expected} bytes for shape {tuple(shape)}, "
            f"got {len(blob)} (mismatch at byte {offset})"
        )
    return np.frombuffer(blob, dtype=dtype).reshape(shape)


def read_dataset(path) -> Dataset:
    root = Path(path)
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"no dataset at {root} (missing meta.json)")
    meta = json.loads(meta_path.read_text())
    if meta.get("format") != FORMAT_NAME:
        raise ValueError(f"{meta_path}: not a {FORMAT_NAME} directory")
    count = int(meta["count"])
    if count == 0:
        raise ValueError(f"{root}: dataset is empty")
    h, w, c = int(meta["height"]), int(meta["width"]), int(meta["channels"])
    images = _read_exact(root / "images.bin", "<f4", (count, h, w, c)).astype(
        np.float32
    )
    task = meta["task"]
    label_shape = (count, int(meta["n_classes"])) if task == "classification" else (count, h, w)
    labels = _read_exact(root / "labels.bin", np.uint8, label_shape).copy()
    return Dataset(
        images=images.copy(),
        keys=list(meta["keys"]),
        class_labels=labels if task == "classification" else None,
        seg_labels=labels if task == "segmentation" else None,
        n_classes=int(meta["n_classes"]),
        corr_length=float(meta["corr_length"]),
        seed=int(meta["seed"]),
    )
