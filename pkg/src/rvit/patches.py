"""Image partitioning, patch embedding, and grid bookkeeping.

An image (H, W, C) is cut into non-overlapping P x P patches in row-major
grid order: patch i covers grid cell (i // (W/P), i % (W/P)). Each patch is
flattened to a length P*P*C pixel vector (row-major over rows, columns,
channels), which is what both the similarity computations and the linear
patch projection consume.

Positional information is a fixed 2D sinusoidal table over the (N+1)-row
token sequence; row 0 belongs to the class token (all zeros), rows 1..N to
grid positions. Embedding a subset of patches *gathers* the positional rows
of their original grid cells, so a token's positional addend never depends
on which other patches were kept.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .autodiff import Tape, Tensor


@dataclass
class PatchGrid:
    """Flattened patch pixel vectors plus the grid topology they came from."""

    patch_size: int
    grid_h: int
    grid_w: int
    channels: int
    vectors: np.ndarray  # (N, P*P*C) float64

    @property
    def n_patches(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def image_shape(self) -> tuple[int, int, int]:
        p = self.patch_size
        return (self.grid_h * p, self.grid_w * p, self.channels)


def partition(image: np.ndarray, patch_size: int) -> PatchGrid:
    """Cut an (H, W, C) image into N = H*W/P^2 non-overlapping patches."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.ndim != 3:
        raise ValueError(f"expected (H, W, C) image, got shape {image.shape}")
    h, w, c = image.shape
    p = int(patch_size)
    if p < 1 or h % p != 0 or w % p != 0:
        raise ValueError(
            f"image extents must be divisible by the patch size: "
            f"H={h}, W={w}, P={p}"
        )
    gh, gw = h // p, w // p
    vectors = (
        image.reshape(gh, p, gw, p, c)
        .transpose(0, 2, 1, 3, 4)
        .reshape(gh * gw, p * p * c)
    )
    return PatchGrid(p, gh, gw, c, np.ascontiguousarray(vectors))


def reassemble(grid: PatchGrid) -> np.ndarray:
    """Inverse of :func:`partition`; bit-exact round trip."""
    p, gh, gw, c = grid.patch_size, grid.grid_h, grid.grid_w, grid.channels
    return (
        grid.vectors.reshape(gh, gw, p, p, c)
        .transpose(0, 2, 1, 3, 4)
        .reshape(gh * p, gw * p, c)
    )


def downscale(image: np.ndarray, factor: int) -> np.ndarray:
    """Block-mean pooling by an integer factor (coarser ground sampling)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[:, :, None]
    h, w, c = image.shape
    f = int(factor)
    if f < 1 or h % f != 0 or w % f != 0:
        raise ValueError(
            f"image extents must be divisible by the downscale factor: "
            f"H={h}, W={w}, factor={f}"
        )
    if f == 1:
        return image.copy()
    return image.reshape(h // f, f, w // f, f, c).mean(axis=(1, 3))


def _sincos_1d(n_pos: int, dim: int) -> np.ndarray:
    # dim must be even: half sines, half cosines, log-spaced frequencies.
    omega = 1.0 / (10000.0 ** (np.arange(dim // 2, dtype=np.float64) / (dim // 2)))
    angles = np.arange(n_pos, dtype=np.float64)[:, None] * omega[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


@lru_cache(maxsize=32)
def positional_table(grid_h: int, grid_w: int, dim: int) -> np.ndarray:
    """Fixed 2D sinusoidal table, shape (N+1, dim); row 0 (class token) is zero.

    Half the width encodes the grid row, half the grid column. ``dim`` must
    be divisible by 4.
    """
    if dim % 4 != 0:
        raise ValueError(f"token width must be divisible by 4, got {dim}")
    rows = _sincos_1d(grid_h, dim // 2)  # (grid_h, dim/2)
    cols = _sincos_1d(grid_w, dim // 2)  # (grid_w, dim/2)
    grid = np.concatenate(
        [
            np.repeat(rows, grid_w, axis=0),
            np.tile(cols, (grid_h, 1)),
        ],
        axis=1,
    )
    table = np.concatenate([np.zeros((1, dim)), grid], axis=0)
    table.setflags(write=False)
    return table


@dataclass
class PatchEmbedding:
    """Learned patch projection and class token plus the fixed positional table.

    ``projection`` maps flattened patch pixels (P*P*C) to the token width D;
    ``cls_token`` occupies sequence position 0.
    """

    projection: Tensor  # (P*P*C, D)
    cls_token: Tensor  # (D,)

    @property
    def dim(self) -> int:
        return self.projection.shape[1]


def embed(
    tape: Tape, grid: PatchGrid, indices, embedding: PatchEmbedding
) -> Tensor:
    """Embed the retained patches of one sample: (k+1, D) token sequence.

    Row 0 is the class token plus its positional entry; row j is the linear
    projection of patch ``indices[j]`` plus the positional entry of its
    original grid cell. Indices are 0-based, kept in the order given.
    """
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise ValueError("at least one patch index must be retained")
    if indices.min() < 0 or indices.max() >= grid.n_patches:
        raise IndexError(
            f"patch index out of range 0..{grid.n_patches - 1}: {indices}"
        )
    pos = positional_table(grid.grid_h, grid.grid_w, embedding.dim)
    tokens = tape.matmul(grid.vectors[indices], embedding.projection)
    tokens = tape.add(tokens, pos[indices + 1])
    cls_row = tape.add(tape.reshape(embedding.cls_token, (1, -1)), pos[:1])
    return tape.concat([cls_row, tokens], axis=0)


def embed_batch(
    tape: Tape,
    patch_vectors: np.ndarray,
    index_matrix: np.ndarray,
    row_mask: np.ndarray,
    grid_hw: tuple[int, int],
    embedding: PatchEmbedding,
) -> Tensor:
    """Embed retained patches for a whole batch in one projection.

    ``patch_vectors`` is (B, N, P*P*C); ``index_matrix`` (B, L) holds each
    sample's retained indices left-justified (padding slots may point
    anywhere, they are zeroed through ``row_mask``). Returns (B, L, D) patch
    token rows only - the class token is the encoder's to prepend. Padded
    rows are exactly zero, matching the zero-padding contract of batch
    collation.
    """
    pos = positional_table(grid_hw[0], grid_hw[1], embedding.dim)
    rows = np.arange(index_matrix.shape[0])[:, None]
    gathered = patch_vectors[rows, index_matrix]  # (B, L, P*P*C)
    tokens = tape.matmul(gathered, embedding.projection)
    tokens = tape.add(tokens, pos[index_matrix + 1])
    return tape.mul(tokens, row_mask[:, :, None].astype(np.float64))
