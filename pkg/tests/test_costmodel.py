"""Cost model: paper-scale efficiency ratios, agreement with the runtime
matmul counter, monotonicity, and the quadratic-attention limit."""

import numpy as np
import pytest

from rvit.autodiff import Tape
from rvit.costmodel import efficiency_ratios, flops, retained_seq_len
from rvit.harness import ExperimentConfig
from rvit.masking import plan_uniform_random, full_plan
from rvit.model import ModelConfig, PRESETS, RvitNet


def test_full_retention_ratio_is_one():
    ratios = efficiency_ratios(PRESETS["vitb16"], (224, 224), 1.0)
    assert ratios.gflops_ratio == 1.0
    assert ratios.memory_ratio == 1.0


def test_vitb16_quarter_retention_is_about_4x():
    ratios = efficiency_ratios(PRESETS["vitb16"], (224, 224), 0.25)
    assert 3.5 <= ratios.gflops_ratio <= 4.5, ratios.gflops_ratio


def test_vitb16_5pct_retention_20x_flops_10x_memory():
    ratios = efficiency_ratios(PRESETS["vitb16"], (224, 224), 0.05)
    assert 16.0 <= ratios.gflops_ratio <= 24.0, ratios.gflops_ratio
    assert 8.0 <= ratios.memory_ratio <= 12.0, ratios.memory_ratio


def test_seq_len_rule():
    assert retained_seq_len(1.0, 196) == 197
    assert retained_seq_len(0.25, 196) == 50
    assert retained_seq_len(0.05, 196) == 10
    with pytest.raises(ValueError):
        retained_seq_len(0.0, 196)


def _instrumented_per_sample_flops(cfg: ModelConfig, image: int, r: float, task: str) -> float:
    batch = 2
    rng = np.random.default_rng(123)
    model = RvitNet(cfg, in_channels=3, n_classes=5, task=task, seed=0)
    images = rng.normal(size=(batch, image, image, 3))
    n = (image // cfg.patch_size) ** 2
    plans = [
        full_plan(n) if r >= 1.0 else plan_uniform_random(f"i{i}", r, n)
        for i in range(batch)
    ]
    tape = Tape(record=False)
    if task == "classification":
        model.forward_classification(tape, images, plans)
    else:
        model.forward_segmentation(tape, images, plans)
    return tape.matmul_flops / batch


GRID = [
    (ModelConfig(width=32, depth=4, heads=4, patch_size=8), 32, 1.0, "classification"),
    (ModelConfig(width=32, depth=4, heads=4, patch_size=8), 32, 0.5, "classification"),
    (ModelConfig(width=32, depth=4, heads=4, patch_size=8), 32, 0.25, "segmentation"),
    (ModelConfig(width=64, depth=8, heads=8, patch_size=8), 32, 1.0, "classification"),
    (ModelConfig(width=64, depth=8, heads=8, patch_size=8), 32, 0.5, "segmentation"),
    (ModelConfig(width=64, depth=8, heads=8, patch_size=8), 32, 0.25, "classification"),
    (ModelConfig(width=32, depth=4, heads=2, patch_size=4), 64, 1.0, "segmentation"),
    (ModelConfig(width=32, depth=4, heads=2, patch_size=4), 64, 0.5, "classification"),
    (ModelConfig(width=32, depth=4, heads=2, patch_size=4), 64, 0.25, "classification"),
    (ModelConfig(width=64, depth=4, heads=4, mlp_ratio=2.0, patch_size=16), 64, 1.0, "classification"),
    (ModelConfig(width=64, depth=4, heads=4, mlp_ratio=2.0, patch_size=16), 64, 0.5, "segmentation"),
    (ModelConfig(width=64, depth=4, heads=4, mlp_ratio=2.0, patch_size=16), 64, 0.3, "classification"),
]


@pytest.mark.parametrize("cfg,image,r,task", GRID)
def test_analytic_matches_instrumented_matmul_counts(cfg, image, r, task):
    analytic = flops(cfg, (image, image), r, in_channels=3, n_classes=5, task=task)
    measured = _instrumented_per_sample_flops(cfg, image, r, task)
    assert abs(analytic.total_flops - measured) / measured < 0.01, (
        analytic.total_flops,
        measured,
    )


def test_flops_and_memory_strictly_increase_with_retention():
    cfg = PRESETS["vits16"]
    ratios = [0.1, 0.2, 0.4, 0.6, 0.8, 1.0]
    reports = [flops(cfg, (224, 224), r) for r in ratios]
    # distinct retained counts at every step in this grid
    seqs = [rep.seq_len for rep in reports]
    assert seqs == sorted(set(seqs))
    totals = [rep.total_flops for rep in reports]
    mems = [rep.peak_memory_bytes for rep in reports]
    assert all(a < b for a, b in zip(totals, totals[1:]))
    assert all(a < b for a, b in zip(mems, mems[1:]))


def test_attention_logits_ratio_approaches_inverse_r_squared():
    cfg = PRESETS["vitb16"]
    image = (1792, 1792)  # N = 12544 tokens
    for r in (0.5, 0.25):
        full = flops(cfg, image, 1.0).flops_attn_logits
        masked = flops(cfg, image, r).flops_attn_logits
        assert abs(full / masked - (1.0 / r) ** 2) / (1.0 / r) ** 2 < 0.01


def test_experiment_digest_is_stable():
    a = ExperimentConfig(seed=1)
    b = ExperimentConfig(seed=1)
    c = ExperimentConfig(seed=2)
    assert a.digest() == b.digest()
    assert a.digest() != c.digest()
