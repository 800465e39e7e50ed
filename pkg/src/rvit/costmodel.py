"""Analytic FLOPs and activation-memory accounting per retention ratio.

FLOPs count matrix products only, at 2 FLOPs per multiply-accumulate - the
same convention as the runtime counter inside the autodiff tape, so the two
can be cross-checked to the last FLOP. Elementwise work (layernorm, GELU,
softmax, bias adds) is excluded on both sides.

Peak activation memory is the float32 high-water mark of a batch-one
forward pass, taken as the maximum over pipeline stages of the live
activation set:

* embedding stage: the raw input image (which must stay resident while
  patches are compared and selected) plus the embedded token sequence;
* attention, by sub-stage: ln output + q/k/v; residual + both attention
  score tensors (heads x L x L); residual + probabilities + values + mixed
  output;
* MLP: residual + hidden + activation output.

The quadratic attention tensors dominate at full retention for long
sequences, the image buffer floors the peak at tiny retention, and both
effects together reproduce the characteristic compute/memory savings gap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .model import ModelConfig

BYTES_F32 = 4


@dataclass
class CostReport:
    """Per-block FLOP breakdown and activation peak for one configuration."""

    seq_len: int
    n_tokens: int
    retention: float
    flops_embed: int
    flops_attn_qkv: int
    flops_attn_logits: int
    flops_attn_values: int
    flops_attn_proj: int
    flops_mlp: int
    flops_head: int
    flops_decoder: int
    total_flops: int = field(init=False)
    peak_memory_bytes: int = 0

    def __post_init__(self):
        self.total_flops = (
            self.flops_embed
            + self.flops_attn_qkv
            + self.flops_attn_logits
            + self.flops_attn_values
            + self.flops_attn_proj
            + self.flops_mlp
            + self.flops_head
            + self.flops_decoder
        )

    @property
    def gflops(self) -> float:
        return self.total_flops / 1e9

    @property
    def peak_memory_mb(self) -> float:
        return self.peak_memory_bytes / (1024.0 * 1024.0)

    def to_dict(self) -> dict:
        return {
            "seq_len": self.seq_len,
            "n_tokens": self.n_tokens,
            "retention": self.retention,
            "gflops": self.gflops,
            "peak_memory_mb": self.peak_memory_mb,
            "flops": {
                "embed": self.flops_embed,
                "attn_qkv": self.flops_attn_qkv,
                "attn_logits": self.flops_attn_logits,
                "attn_values": self.flops_attn_values,
                "attn_proj": self.flops_attn_proj,
                "mlp": self.flops_mlp,
                "head": self.flops_head,
                "decoder": self.flops_decoder,
            },
        }


def retained_seq_len(r: float, n_tokens: int) -> int:
    """Transformer sequence length at retention r: floor(r*N) patches + class."""
    if not 0.0 < r <= 1.0:
        raise ValueError(f"retention ratio must be in (0, 1], got {r}")
    return int(r * n_tokens) + 1


def flops(
    config: ModelConfig,
    image_hw: tuple[int, int],
    r: float = 1.0,
    in_channels: int = 3,
    n_classes: int = 1000,
    task: str = "classification",
    decoder_width: int | None = None,
) -> CostReport:
    """Analytic per-sample cost of one forward pass at retention ``r``.

    Decoder FLOPs are reported for segmentation configs but the headline
    efficiency ratios are encoder+head quantities; the decoder always works
    on the full scattered grid, so its cost does not shrink with ``r``.
    """
    h, w = image_hw
    p = config.patch_size
    if h % p != 0 or w % p != 0:
        raise ValueError(f"image {h}x{w} not divisible by patch size {p}")
    n = (h * w) // (p * p)
    seq = retained_seq_len(r, n)
    k = seq - 1
    d = config.width
    depth = config.depth
    hidden = config.mlp_hidden

    mm = lambda m, kk, nn: 2 * m * kk * nn
    embed = mm(k, p * p * in_channels, d)
    qkv = depth * 3 * mm(seq, d, d)
    logits = depth * mm(seq, d, seq)  # heads * (seq x hd x seq) sums to this
    values = depth * mm(seq, seq, d)
    proj = depth * mm(seq, d, d)
    mlp = depth * (mm(seq, d, hidden) + mm(seq, hidden, d))
    head = mm(1, d, n_classes) if task == "classification" else 0
    decoder = 0
    if task == "segmentation":
        f = decoder_width or d
        decoder = 4 * mm(n, d, f) + mm(n, f, n_classes)

    return CostReport(
        seq_len=seq,
        n_tokens=n,
        retention=r,
        flops_embed=embed,
        flops_attn_qkv=qkv,
        flops_attn_logits=logits,
        flops_attn_values=values,
        flops_attn_proj=proj,
        flops_mlp=mlp,
        flops_head=head,
        flops_decoder=decoder,
        peak_memory_bytes=peak_activation_bytes(config, image_hw, r, in_channels),
    )


def peak_activation_bytes(
    config: ModelConfig,
    image_hw: tuple[int, int],
    r: float = 1.0,
    in_channels: int = 3,
) -> int:
    """Float32 activation high-water mark of a batch-one forward pass."""
    h, w = image_hw
    n = (h * w) // (config.patch_size * config.patch_size)
    seq = retained_seq_len(r, n)
    d = config.width
    heads = config.heads
    hidden = config.mlp_hidden

    image = h * w * in_channels
    embed_stage = image + seq * d
    attn_qkv = 5 * seq * d  # residual + ln output + q, k, v
    attn_scores = seq * d + 2 * heads * seq * seq  # residual + logits + probs
    attn_mix = 3 * seq * d + heads * seq * seq  # residual + v + mixed + probs
    mlp_stage = seq * d * 2 + 2 * seq * hidden  # residual + ln + fc1 + gelu
    peak_floats = max(embed_stage, attn_qkv, attn_scores, attn_mix, mlp_stage)
    return peak_floats * BYTES_F32


@dataclass
class EfficiencyRatios:
    """Full-input cost divided by masked cost for one configuration."""

    retention: float
    gflops_full: float
    gflops_masked: float
    memory_full_mb: float
    memory_masked_mb: float

    @property
    def gflops_ratio(self) -> float:
        return self.gflops_full / self.gflops_masked

    @property
    def memory_ratio(self) -> float:
        return self.memory_full_mb / self.memory_masked_mb

    def to_dict(self) -> dict:
        return {
            "retention": self.retention,
            "gflops_full": self.gflops_full,
            "gflops_masked": self.gflops_masked,
            "gflops_ratio": self.gflops_ratio,
            "memory_full_mb": self.memory_full_mb,
            "memory_masked_mb": self.memory_masked_mb,
            "memory_ratio": self.memory_ratio,
        }


def efficiency_ratios(
    config: ModelConfig,
    image_hw: tuple[int, int],
    r: float,
    in_channels: int = 3,
    n_classes: int = 1000,
) -> EfficiencyRatios:
    full = flops(config, image_hw, 1.0, in_channels, n_classes)
    masked = flops(config, image_hw, r, in_channels, n_classes)
    return EfficiencyRatios(
        retention=r,
        gflops_full=full.gflops,
        gflops_masked=masked.gflops,
        memory_full_mb=full.peak_memory_mb,
        memory_masked_mb=masked.peak_memory_mb,
    )


def cost_json(
    config: ModelConfig,
    image_hw: tuple[int, int],
    r: float,
    in_channels: int = 3,
    n_classes: int = 1000,
    task: str = "classification",
) -> str:
    """CLI payload: the masked-cost report plus full/masked ratios."""
    report = flops(config, image_hw, r, in_channels, n_classes, task)
    ratios = efficiency_ratios(config, image_hw, r, in_channels, n_classes)
    payload = {
        "config": {
            "width": config.width,
            "depth": config.depth,
            "heads": config.heads,
            "mlp_ratio": config.mlp_ratio,
            "patch_size": config.patch_size,
        },
        "image": list(image_hw),
        "in_channels": in_channels,
        "n_classes": n_classes,
        "task": task,
        "report": report.to_dict(),
        "ratios": ratios.to_dict(),
    }
    return json.dumps(payload, indent=2)
