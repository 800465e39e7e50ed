"""Redundancy-aware transformer encoder.

Retained tokens (plus a class token) run through pre-norm transformer blocks
whose attention excludes padded key positions. Four intermediate blocks are
tapped for dense prediction; their patch-token features are scattered back
to the original grid positions with zero vectors at masked locations, which
restores the full spatial topology for the decoder.

Weights live in a flat name -> Tensor map and serialize to a single binary
checkpoint: magic ``RVIT``, a version word, a JSON header (config plus a
tensor manifest), then raw little-endian float64 tensor data in declaration
order.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Tape, Tensor, parameter
from .masking import RetentionPlan, TokenBatch, plan_index_matrix
from .patches import PatchEmbedding, embed_batch, partition

CHECKPOINT_MAGIC = b"RVIT"
CHECKPOINT_VERSION = 1

TASKS = ("classification", "segmentation")


@dataclass(frozen=True)
class ModelConfig:
    """Encoder architecture; tap_blocks default to evenly spaced quarters."""

    width: int = 64
    depth: int = 4
    heads: int = 4
    mlp_ratio: float = 4.0
    patch_size: int = 8
    tap_blocks: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise ValueError(
                f"width {self.width} not divisible by heads {self.heads}"
            )
        if self.width % 4 != 0:
            raise ValueError(f"width must be divisible by 4, got {self.width}")
        if self.depth < 1 or self.patch_size < 1:
            raise ValueError("depth and patch_size must be positive")
        if self.tap_blocks is None and self.depth < 4:
            raise ValueError(
                f"depth {self.depth} cannot host 4 evenly spaced tap blocks; "
                f"use depth >= 4 or pass tap_blocks explicitly"
            )
        taps = self.taps
        if len(taps) != 4 or any(b < 1 or b > self.depth for b in taps):
            raise ValueError(f"tap blocks out of range 1..{self.depth}: {taps}")
        if any(b2 <= b1 for b1, b2 in zip(taps, taps[1:])):
            raise ValueError(f"tap blocks must strictly increase: {taps}")

    @property
    def taps(self) -> tuple[int, ...]:
        if self.tap_blocks is not None:
            return tuple(self.tap_blocks)
        return tuple(round(self.depth * stage / 4) for stage in (1, 2, 3, 4))

    @property
    def head_dim(self) -> int:
        return self.width // self.heads

    @property
    def mlp_hidden(self) -> int:
        return int(round(self.width * self.mlp_ratio))


# Published encoder sizes, all at patch 16.
PRESETS = {
    "vits16": ModelConfig(width=384, depth=12, heads=6, mlp_ratio=4.0, patch_size=16),
    "vitb16": ModelConfig(width=768, depth=12, heads=12, mlp_ratio=4.0, patch_size=16),
    "vitl16": ModelConfig(width=1024, depth=24, heads=16, mlp_ratio=4.0, patch_size=16),
}


class RvitNet:
    """Encoder plus task head; task is "classification" or "segmentation"."""

    def __init__(
        self,
        config: ModelConfig,
        in_channels: int,
        n_classes: int,
        task: str = "classification",
        seed: int = 0,
        decoder_width: int | None = None,
    ):
        if task not in TASKS:
            raise ValueError(f"unknown task {task!r}, expected one of {TASKS}")
        if n_classes < 1 or in_channels < 1:
            raise ValueError("n_classes and in_channels must be positive")
        self.config = config
        self.in_channels = in_channels
        self.n_classes = n_classes
        self.task = task
        self.decoder_width = decoder_width or config.width
        self._params: dict[str, Tensor] = {}
        self._init_weights(seed)

    # -- parameters ---------------------------------------------------------

    def _new(self, name: str, data: np.ndarray) -> Tensor:
        t = parameter(data)
        self._params[name] = t
        return t

    def _init_weights(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        cfg = self.config
        d = cfg.width
        patch_dim = cfg.patch_size * cfg.patch_size * self.in_channels

        def normal(*shape):
            # fan-in scaled so activations stay O(1) at any width
            return rng.normal(0.0, 1.0 / np.sqrt(shape[0]), size=shape)

        self.embedding = PatchEmbedding(
            projection=self._new("patch_embed.weight", normal(patch_dim, d)),
            cls_token=self._new("cls_token", normal(d)),
        )
        self.blocks = []
        for i in range(cfg.depth):
            blk = {
                "ln1.gain": self._new(f"blocks.{i}.ln1.gain", np.ones(d)),
                "ln1.bias": self._new(f"blocks.{i}.ln1.bias", np.zeros(d)),
                "wq": self._new(f"blocks.{i}.attn.wq", normal(d, d)),
                "bq": self._new(f"blocks.{i}.attn.bq", np.zeros(d)),
                "wk": self._new(f"blocks.{i}.attn.wk", normal(d, d)),
                "bk": self._new(f"blocks.{i}.attn.bk", np.zeros(d)),
                "wv": self._new(f"blocks.{i}.attn.wv", normal(d, d)),
                "bv": self._new(f"blocks.{i}.attn.bv", np.zeros(d)),
                "wo": self._new(f"blocks.{i}.attn.wo", normal(d, d)),
                "bo": self._new(f"blocks.{i}.attn.bo", np.zeros(d)),
                "ln2.gain": self._new(f"blocks.{i}.ln2.gain", np.ones(d)),
                "ln2.bias": self._new(f"blocks.{i}.ln2.bias", np.zeros(d)),
                "w1": self._new(f"blocks.{i}.mlp.w1", normal(d, cfg.mlp_hidden)),
                "b1": self._new(f"blocks.{i}.mlp.b1", np.zeros(cfg.mlp_hidden)),
                "w2": self._new(f"blocks.{i}.mlp.w2", normal(cfg.mlp_hidden, d)),
                "b2": self._new(f"blocks.{i}.mlp.b2", np.zeros(d)),
            }
            self.blocks.append(blk)
        self.norm_gain = self._new("norm.gain", np.ones(d))
        self.norm_bias = self._new("norm.bias", np.zeros(d))
        if self.task == "classification":
            self.head_w = self._new("head.weight", normal(d, self.n_classes))
            self.head_b = self._new("head.bias", np.zeros(self.n_classes))
        else:
            f = self.decoder_width
            for stage in range(4):
                self._new(f"decoder.proj{stage}.weight", normal(d, f))
                self._new(f"decoder.proj{stage}.bias", np.zeros(f))
            self._new("decoder.classify.weight", normal(f, self.n_classes))
            self._new("decoder.classify.bias", np.zeros(self.n_classes))

    def named_parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def parameters(self) -> list[Tensor]:
        return list(self._params.values())

    def head_parameters(self) -> list[Tensor]:
        prefix = "head." if self.task == "classification" else "decoder."
        return [t for n, t in self._params.items() if n.startswith(prefix)]

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    # -- forward ------------------------------------------------------------

    def _linear(self, tape: Tape, x, w: Tensor, b: Tensor) -> Tensor:
        return tape.add(tape.matmul(x, w), b)

    def _attention(self, tape: Tape, x: Tensor, key_mask: np.ndarray, blk) -> Tensor:
        bsz, seq, d = x.shape
        heads, hd = self.config.heads, self.config.head_dim

        def split_heads(t):
            t = tape.reshape(t, (bsz, seq, heads, hd))
            return tape.swapaxes(t, 1, 2)  # (B, heads, S, hd)

        q = split_heads(self._linear(tape, x, blk["wq"], blk["bq"]))
        k = split_heads(self._linear(tape, x, blk["wk"], blk["bk"]))
        v = split_heads(self._linear(tape, x, blk["wv"], blk["bv"]))
        logits = tape.scale(
            tape.matmul(q, tape.swapaxes(k, -1, -2)), 1.0 / math.sqrt(hd)
        )
        probs = tape.masked_softmax(logits, key_mask[:, None, None, :])
        mixed = tape.matmul(probs, v)
        mixed = tape.reshape(tape.swapaxes(mixed, 1, 2), (bsz, seq, d))
        return self._linear(tape, mixed, blk["wo"], blk["bo"])

    def encode(
        self, tape: Tape, batch: TokenBatch
    ) -> tuple[Tensor, list[Tensor]]:
        """Run the transformer; returns (class embedding, four stage features).

        The class token is prepended to the patch rows and always attends;
        padded rows are excluded as attention keys. Stage features are the
        patch-token hidden states after each tap block (class token dropped),
        still in retained-row order and including any padding rows.
        """
        bsz = batch.batch_size
        d = self.config.width
        cls_rows = tape.broadcast_to(
            tape.reshape(self.embedding.cls_token, (1, 1, d)), (bsz, 1, d)
        )
        x = tape.concat([cls_rows, batch.values], axis=1)
        key_mask = np.concatenate(
            [np.ones((bsz, 1), dtype=np.int8), batch.attn_mask], axis=1
        )
        stages = []
        for i, blk in enumerate(self.blocks, start=1):
            h = tape.layernorm(x, blk["ln1.gain"], blk["ln1.bias"])
            x = tape.add(x, self._attention(tape, h, key_mask, blk))
            h = tape.layernorm(x, blk["ln2.gain"], blk["ln2.bias"])
            h = self._linear(tape, h, blk["w1"], blk["b1"])
            h = tape.gelu(h)
            h = self._linear(tape, h, blk["w2"], blk["b2"])
            x = tape.add(x, h)
            if i in self.config.taps:
                stages.append(tape.narrow(x, 1, 1, batch.seq_len))
        x = tape.layernorm(x, self.norm_gain, self.norm_bias)
        cls_out = tape.reshape(tape.narrow(x, 1, 0, 1), (bsz, d))
        return cls_out, stages

    def classify(self, tape: Tape, cls_embedding) -> Tensor:
        """Linear head on the class-token embedding."""
        return self._linear(tape, cls_embedding, self.head_w, self.head_b)

    def tokenize(
        self, tape: Tape, images: np.ndarray, plans: list[RetentionPlan]
    ) -> TokenBatch:
        """Partition, gather retained patches, embed, and pad a batch."""
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 3:
            images = images[None]
        grids = [partition(img, self.config.patch_size) for img in images]
        vectors = np.stack([g.vectors for g in grids])
        index_matrix, row_mask, counts = plan_index_matrix(plans)
        tokens = embed_batch(
            tape,
            vectors,
            index_matrix,
            row_mask,
            (grids[0].grid_h, grids[0].grid_w),
            self.embedding,
        )
        return TokenBatch(tokens, row_mask.astype(np.int8), counts, index_matrix)

    def forward_classification(
        self, tape: Tape, images: np.ndarray, plans: list[RetentionPlan]
    ) -> Tensor:
        cls_out, _ = self.encode(tape, self.tokenize(tape, images, plans))
        return self.classify(tape, cls_out)

    def forward_segmentation(
        self, tape: Tape, images: np.ndarray, plans: list[RetentionPlan]
    ) -> Tensor:
        """Per-pixel logits (B, n_classes, H, W) via scatter-back decoding."""
        from .seghead import decode

        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 3:
            images = images[None]
        grid_hw = (
            images.shape[1] // self.config.patch_size,
            images.shape[2] // self.config.patch_size,
        )
        batch = self.tokenize(tape, images, plans)
        _, stages = self.encode(tape, batch)
        n = grid_hw[0] * grid_hw[1]
        dense = [
            scatter_batch(tape, s, batch.index_matrix, batch.attn_mask, n)
            for s in stages
        ]
        maps = [
            tape.reshape(m, (batch.batch_size, grid_hw[0], grid_hw[1], -1))
            for m in dense
        ]
        return decode(self, tape, maps)


# -- scatter-back -------------------------------------------------------------


def scatter_batch(
    tape: Tape,
    features: Tensor,
    index_matrix: np.ndarray,
    row_mask: np.ndarray,
    n_tokens: int,
) -> Tensor:
    """Scatter retained-row features to their grid positions, zeros elsewhere.

    Padding rows are zeroed before the scatter so they cannot leak into
    position 0 (their index slot).
    """
    masked = tape.mul(features, np.asarray(row_mask, dtype=np.float64)[:, :, None])
    return tape.scatter_rows(masked, index_matrix, n_tokens)


def scatter_back(
    tape: Tape,
    features,
    plan: RetentionPlan,
    grid_hw: tuple[int, int],
) -> Tensor:
    """Single-sample scatter-back to a dense (D, H_grid, W_grid) map.

    Row j of ``features`` lands at grid cell ``plan.indices[j]`` (row-major);
    every non-retained cell is an exact zero vector.
    """
    features = tape._wrap(features)
    if features.ndim != 2 or features.shape[0] != plan.k:
        raise ValueError(
            f"expected ({plan.k}, D) features for a plan keeping {plan.k} "
            f"patches, got {features.shape}"
        )
    gh, gw = grid_hw
    if gh * gw != plan.n_tokens:
        raise ValueError(f"grid {gh}x{gw} does not hold {plan.n_tokens} tokens")
    batched = tape.reshape(features, (1,) + tuple(features.shape))
    dense = tape.scatter_rows(batched, plan.indices[None, :], plan.n_tokens)
    dense = tape.reshape(dense, (gh, gw, features.shape[1]))
    return tape.moveaxis(dense, -1, 0)


# -- checkpoints -----------------------------------------------------------------


def save_checkpoint(path, model: RvitNet) -> None:
    """Single-file binary checkpoint; see module docstring for the layout."""
    names = list(model._params)
    header = {
        "config": asdict(model.config),
        "in_channels": model.in_channels,
        "n_classes": model.n_classes,
        "task": model.task,
        "decoder_width": model.decoder_width,
        "tensors": [
            {"name": n, "shape": list(model._params[n].shape)} for n in names
        ],
    }
    payload = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(payload)))
        fh.write(payload)
        for n in names:
            fh.write(np.ascontiguousarray(model._params[n].data, dtype="<f8").tobytes())


def load_checkpoint(path) -> RvitNet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"not a checkpoint: bad magic {blob[:4]!r}")
    if len(blob) < 12:
        raise ValueError(f"truncated checkpoint header at byte {len(blob)}")
    version, header_len = struct.unpack("<II", blob[4:12])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    if len(blob) < 12 + header_len:
        raise ValueError(f"truncated checkpoint header at byte {len(blob)}")
    header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    cfg_dict = dict(header["config"])
    if cfg_dict.get("tap_blocks") is not None:
        cfg_dict["tap_blocks"] = tuple(cfg_dict["tap_blocks"])
    model = RvitNet(
        ModelConfig(**cfg_dict),
        in_channels=header["in_channels"],
        n_classes=header["n_classes"],
        task=header["task"],
        decoder_width=header.get("decoder_width"),
    )
    offset = 12 + header_len
    for entry in header["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in model._params:
            raise ValueError(f"checkpoint names unknown tensor {name!r}")
        nbytes = int(np.prod(shape)) * 8 if shape else 8
        chunk = blob[offset : offset + nbytes]
        if len(chunk) < nbytes:
            raise ValueError(f"truncated checkpoint data at byte {offset + len(chunk)}")
        model._params[name].data = (
            np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(np.float64)
        )
        offset += nbytes
    if offset != len(blob):
        raise ValueError(f"trailing bytes after checkpoint data at byte {offset}")
    return model
