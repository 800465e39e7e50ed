"""Lightweight dense-prediction decoder over the four scattered stage maps.

Each stage map is projected per position (1x1 convolution) to a shared
width, the four projections are summed, passed through a GELU, projected to
class logits, and nearest-neighbor upsampled by the patch size back to pixel
resolution. Masked grid positions enter as exact zero vectors - there is no
learned mask token - so a pixel's logits depend only on the stage features
of its own grid cell.

This is a deliberately small stand-in for a feature-pyramid decoder; the
masking mechanics, not decoder capacity, are what this package studies.
"""

from __future__ import annotations

from .autodiff import Tape, Tensor


def decode(model, tape: Tape, stage_maps: list[Tensor]) -> Tensor:
    """Per-pixel class logits (B, n_classes, H, W) from 4 x (B, h, w, D) maps."""
    if len(stage_maps) != 4:
        raise ValueError(f"expected 4 stage maps, got {len(stage_maps)}")
    shape = stage_maps[0].shape
    if any(m.shape != shape for m in stage_maps[1:]):
        raise ValueError(
            f"stage map extents differ: {[m.shape for m in stage_maps]}"
        )
    params = model._params
    fused = None
    for stage, m in enumerate(stage_maps):
        proj = tape.add(
            tape.matmul(m, params[f"decoder.proj{stage}.weight"]),
            params[f"decoder.proj{stage}.bias"],
        )
        fused = proj if fused is None else tape.add(fused, proj)
    fused = tape.gelu(fused)
    logits = tape.add(
        tape.matmul(fused, params["decoder.classify.weight"]),
        params["decoder.classify.bias"],
    )
    pixels = tape.upsample_nearest(logits, model.config.patch_size)
    return tape.moveaxis(pixels, -1, 1)  # (B, K, H, W)
