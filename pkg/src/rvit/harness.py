"""Training, evaluation, probing, and sweep loops on synthetic datasets.

Two experimental settings drive everything. Setting A masks during training
(a fresh plan per sample per epoch for the random strategy) and evaluates
on the full input; Setting B trains however it likes and masks at inference.
Both reduce to the same primitives here: ``train_model`` and
``evaluate_model`` with independent retention settings.

All loops are deterministic given their seeds: batch order, mask plans, and
weight initialization each derive from named sub-seeds, so identical
configurations produce identical checkpoints and identical result rows.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.special import expit

from .autodiff import Tape, sgd_step
from .costmodel import flops
from .masking import (
    RetentionPlan,
    full_plan,
    plan_diversity,
    plan_thresholded,
    plan_uniform_random,
    similarity_matrix,
)
from .metrics import macro_f1, mean_iou
from .model import ModelConfig, RvitNet
from .patches import partition
from .synthdata import Dataset, SceneSpec, generate_dataset

log = logging.getLogger("rvit")

RESULT_COLUMNS = [
    "task",
    "strategy",
    "train_ratio",
    "eval_ratio",
    "tau",
    "patch_size",
    "lambda",
    "seed",
    "metric_name",
    "metric_value",
    "gflops",
    "peak_mem_mb",
    "wall_s",
]


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the step at which it happened."""


@dataclass(frozen=True)
class ExperimentConfig:
    """One sweep cell: data, model, masking, and optimizer settings."""

    task: str = "classification"
    strategy: str = "ms1"
    train_ratio: float = 1.0
    eval_ratio: float = 1.0
    tau: float | None = None
    width: int = 64
    depth: int = 4
    heads: int = 4
    mlp_ratio: float = 4.0
    patch_size: int = 8
    epochs: int = 5
    batch_size: int = 32
    learning_rate: float = 0.1
    seed: int = 0
    image_size: int = 64
    channels: int = 3
    corr_length: float = 16.0
    n_classes: int = 4
    train_count: int = 2000
    eval_count: int = 500
    data_seed: int = 7

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            width=self.width,
            depth=self.depth,
            heads=self.heads,
            mlp_ratio=self.mlp_ratio,
            patch_size=self.patch_size,
        )

    def digest(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:12]


def _plan_cache(ds: Dataset, patch_size: int) -> list:
    """Similarity matrices per sample, for the diversity strategies."""
    return [
        similarity_matrix(partition(img.astype(np.float64), patch_size))
        for img in ds.images
    ]


def _make_plan(
    strategy: str,
    key: str,
    ratio: float,
    tau: float | None,
    n_tokens: int,
    sim=None,
) -> RetentionPlan:
    if strategy == "ms3":
        if tau is None:
            raise ValueError("strategy ms3 needs a similarity threshold")
        return plan_thresholded(sim, tau)
    if ratio >= 1.0:
        return full_plan(n_tokens)
    if strategy == "ms1":
        return plan_uniform_random(key, ratio, n_tokens)
    if strategy == "ms2":
        return plan_diversity(sim, ratio)
    raise ValueError(f"unknown masking strategy {strategy!r}")


def train_model(
    cfg: ExperimentConfig,
    train_ds: Dataset,
    model: RvitNet | None = None,
) -> RvitNet:
    """Minibatch SGD with per-epoch masking; returns the trained model."""
    n = len(train_ds)
    if model is None:
        model = RvitNet(
            cfg.model_config(),
            in_channels=train_ds.channels,
            n_classes=train_ds.n_classes,
            task=cfg.task,
            seed=cfg.seed,
        )
    n_tokens = (train_ds.image_hw[0] // cfg.patch_size) * (
        train_ds.image_hw[1] // cfg.patch_size
    )
    needs_sim = cfg.strategy in ("ms2", "ms3") and (
        cfg.strategy == "ms3" or cfg.train_ratio < 1.0
    )
    sims = _plan_cache(train_ds, cfg.patch_size) if needs_sim else [None] * n
    labels = train_ds.labels_for(cfg.task)
    order_rng = np.random.default_rng((cfg.seed, 0xBA7C))
    params = model.parameters()
    step = 0
    for epoch in range(cfg.epochs):
        order = order_rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            plans = [
                _make_plan(
                    cfg.strategy,
                    f"{train_ds.keys[i]}:{epoch}",
                    cfg.train_ratio,
                    cfg.tau,
                    n_tokens,
                    sims[i],
                )
                for i in batch
            ]
            images = train_ds.images[batch].astype(np.float64)
            tape = Tape()
            if cfg.task == "classification":
                logits = model.forward_classification(tape, images, plans)
                loss = tape.bce_with_logits(logits, labels[batch].astype(np.float64))
            else:
                logits = model.forward_segmentation(tape, images, plans)
                loss = tape.ce_pixelwise(logits, labels[batch].astype(np.int64), class_axis=1)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"loss became {value} at step {step} "
                    f"(epoch {epoch}, lr {cfg.learning_rate})"
                )
            tape.backward(loss)
            sgd_step(params, cfg.learning_rate)
            step += 1
        log.info("epoch %d/%d done, last loss %.4f", epoch + 1, cfg.epochs, value)
    return model


def batch_loss(cfg: ExperimentConfig, model: RvitNet, ds: Dataset, batch) -> float:
    """Loss of one fixed batch at full retention, without updating weights."""
    tape = Tape(record=False)
    images = ds.images[batch].astype(np.float64)
    n_tokens = (ds.image_hw[0] // cfg.patch_size) * (ds.image_hw[1] // cfg.patch_size)
    plans = [full_plan(n_tokens) for _ in batch]
    labels = ds.labels_for(cfg.task)
    if cfg.task == "classification":
        logits = model.forward_classification(tape, images, plans)
        loss = tape.bce_with_logits(logits, labels[batch].astype(np.float64))
    else:
        logits = model.forward_segmentation(tape, images, plans)
        loss = tape.ce_pixelwise(logits, labels[batch].astype(np.int64), class_axis=1)
    return loss.item()


def predict(
    model: RvitNet,
    ds: Dataset,
    strategy: str = "ms1",
    ratio: float = 1.0,
    tau: float | None = None,
    batch_size: int = 64,
) -> np.ndarray:
    """Scores for every sample at the given inference-time retention.

    Classification returns sigmoid probabilities (n, K); segmentation
    returns per-pixel argmax class maps (n, H, W).
    """
    n = len(ds)
    n_tokens = (ds.image_hw[0] // model.config.patch_size) * (
        ds.image_hw[1] // model.config.patch_size
    )
    needs_sim = strategy == "ms3" or (strategy == "ms2" and ratio < 1.0)
    sims = _plan_cache(ds, model.config.patch_size) if needs_sim else [None] * n
    outputs = []
    for lo in range(0, n, batch_size):
        batch = range(lo, min(lo + batch_size, n))
        plans = [
            _make_plan(strategy, f"{ds.keys[i]}:eval", ratio, tau, n_tokens, sims[i])
            for i in batch
        ]
        images = ds.images[lo : lo + batch_size].astype(np.float64)
        tape = Tape(record=False)
        if model.task == "classification":
            logits = model.forward_classification(tape, images, plans)
            outputs.append(expit(logits.data))
        else:
            logits = model.forward_segmentation(tape, images, plans)
            outputs.append(np.argmax(logits.data, axis=1))
    return np.concatenate(outputs, axis=0)


def evaluate_model(
    model: RvitNet,
    ds: Dataset,
    strategy: str = "ms1",
    ratio: float = 1.0,
    tau: float | None = None,
) -> tuple[str, float]:
    """Deterministic metric over a dataset at the given inference retention."""
    scores = predict(model, ds, strategy, ratio, tau)
    if model.task == "classification":
        return "macro_f1", macro_f1(ds.labels_for("classification"), scores > 0.5)
    return "miou", mean_iou(ds.labels_for("segmentation"), scores, model.n_classes)


def retention_curve(
    model: RvitNet,
    ds: Dataset,
    ratios,
    strategy: str = "ms1",
) -> list[float]:
    """Metric at each inference retention ratio (the Setting-B curve)."""
    return [evaluate_model(model, ds, strategy, r)[1] for r in ratios]


def linear_probe(
    model: RvitNet,
    train_ds: Dataset,
    eval_ds: Dataset,
    epochs: int = 60,
    learning_rate: float = 0.5,
    batch_size: int = 64,
    seed: int = 0,
) -> tuple[str, float]:
    """Train a fresh linear head on frozen class-token embeddings.

    The encoder never sees a gradient: embeddings are computed once with a
    non-recording tape, then only the new head's weights move.
    """
    from .autodiff import parameter

    def embeddings(ds: Dataset) -> np.ndarray:
        outs = []
        n_tokens = (ds.image_hw[0] // model.config.patch_size) * (
            ds.image_hw[1] // model.config.patch_size
        )
        for lo in range(0, len(ds), batch_size):
            images = ds.images[lo : lo + batch_size].astype(np.float64)
            plans = [full_plan(n_tokens) for _ in range(images.shape[0])]
            tape = Tape(record=False)
            cls_out, _ = model.encode(tape, model.tokenize(tape, images, plans))
            outs.append(cls_out.data)
        return np.concatenate(outs, axis=0)

    z_train = embeddings(train_ds)
    z_eval = embeddings(eval_ds)
    y_train = train_ds.labels_for("classification").astype(np.float64)
    k = y_train.shape[1]
    w = parameter(np.zeros((z_train.shape[1], k)))
    b = parameter(np.zeros(k))
    rng = np.random.default_rng((seed, 0x9E0B))
    for _ in range(epochs):
        order = rng.permutation(len(z_train))
        for lo in range(0, len(order), batch_size):
            batch = order[lo : lo + batch_size]
            tape = Tape()
            logits = tape.add(tape.matmul(z_train[batch], w), b)
            loss = tape.bce_with_logits(logits, y_train[batch])
            tape.backward(loss)
            sgd_step([w, b], learning_rate)
    probs = expit(z_eval @ w.data + b.data)
    return "macro_f1", macro_f1(eval_ds.labels_for("classification"), probs > 0.5)


# -- sweep --------------------------------------------------------------------


def _dataset_pair(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    spec = SceneSpec(
        height=cfg.image_size,
        width=cfg.image_size,
        channels=cfg.channels,
        corr_length=cfg.corr_length,
        n_classes=cfg.n_classes,
        seed=cfg.data_seed,
    )
    train_ds = generate_dataset(spec, cfg.train_count)
    eval_ds = generate_dataset(replace(spec, seed=cfg.data_seed + 1), cfg.eval_count)
    return train_ds, eval_ds


def run_cell(cfg: ExperimentConfig, timing: bool = False) -> dict:
    """Generate data, train, evaluate; one result row."""
    started = time.perf_counter()
    train_ds, eval_ds = _dataset_pair(cfg)
    model = train_model(cfg, train_ds)
    metric_name, value = evaluate_model(
        model, eval_ds, cfg.strategy, cfg.eval_ratio, cfg.tau
    )
    report = flops(
        cfg.model_config(),
        (cfg.image_size, cfg.image_size),
        cfg.eval_ratio,
        cfg.channels,
        cfg.n_classes,
        cfg.task,
    )
    return result_row(
        cfg,
        metric_name,
        value,
        gflops=report.gflops,
        peak_mem_mb=report.peak_memory_mb,
        wall_s=time.perf_counter() - started if timing else 0.0,
    )


def result_row(
    cfg: ExperimentConfig,
    metric_name: str,
    value: float,
    gflops: float = 0.0,
    peak_mem_mb: float = 0.0,
    wall_s: float = 0.0,
) -> dict:
    return {
        "task": cfg.task,
        "strategy": cfg.strategy,
        "train_ratio": cfg.train_ratio,
        "eval_ratio": cfg.eval_ratio,
        "tau": "" if cfg.tau is None else cfg.tau,
        "patch_size": cfg.patch_size,
        "lambda": cfg.corr_length,
        "seed": cfg.seed,
        "metric_name": metric_name,
        "metric_value": value,
        "gflops": round(gflops, 6),
        "peak_mem_mb": round(peak_mem_mb, 6),
        "wall_s": round(wall_s, 3),
    }


def expand_grid(grid: dict) -> list[ExperimentConfig]:
    """Cartesian product of ``axes`` over a ``base`` config."""
    base = grid.get("base", {})
    axes = grid.get("axes", {})
    cells = [ExperimentConfig(**base)]
    for name in sorted(axes):
        cells = [replace(c, **{name: v}) for c in cells for v in axes[name]]
    return cells


def _run_cell_guarded(args) -> dict:
    cfg, timing = args
    try:
        return run_cell(cfg, timing)
    except Exception as exc:  # failures become rows, the sweep continues
        log.error("cell %s failed: %s", cfg.digest(), exc)
        return result_row(cfg, "error", float("nan"))


def run_sweep(
    cells: list[ExperimentConfig], jobs: int = 1, timing: bool = False
) -> list[dict]:
    """All cells, optionally in parallel; row order follows cell order."""
    if jobs <= 1:
        return [_run_cell_guarded((c, timing)) for c in cells]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_cell_guarded, [(c, timing) for c in cells]))


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=RESULT_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def aggregate_rows(rows: list[dict]) -> list[dict]:
    """Mean and std of the metric across seeds for otherwise-equal rows."""
    groups: dict[tuple, list[float]] = {}
    for row in rows:
        key = tuple(
            row[c] for c in RESULT_COLUMNS if c not in ("seed", "metric_value", "wall_s")
        )
        groups.setdefault(key, []).append(float(row["metric_value"]))
    out = []
    for key, values in groups.items():
        named = dict(
            zip(
                [c for c in RESULT_COLUMNS if c not in ("seed", "metric_value", "wall_s")],
                key,
            )
        )
        named["mean"] = float(np.mean(values))
        named["std"] = float(np.std(values))
        named["n"] = len(values)
        out.append(named)
    return out
