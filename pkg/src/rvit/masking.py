"""Redundancy-reduction strategies over image patches.

Three complementary strategies decide which patches a sample keeps:

* ``ms1`` - uniform random: a seeded permutation of the patch indices,
  keep the first k. The seed derives from the sample key alone (FNV-1a
  64-bit hash, splitmix64 stream, Fisher-Yates shuffle), so plans are
  bit-identical across runs and platforms.
* ``ms2`` - diversity-based: greedy farthest-first traversal over pixel-space
  cosine similarities, seeded at the token with the lowest mean similarity
  (diagonal included), then repeatedly adding the candidate whose maximum
  similarity to the selected set is smallest.
* ``ms3`` - thresholded diversity: keep token i iff its maximum off-diagonal
  similarity stays below a threshold, so the retention ratio adapts to how
  redundant each scene actually is.

Ties always break toward the lowest index, making every strategy
deterministic and directly checkable against brute-force references.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor
from .patches import PatchGrid

STRATEGIES = ("ms1", "ms2", "ms3")

_MASK64 = (1 << 64) - 1


# -- deterministic seeding ----------------------------------------------------


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash; the fixed sample-key -> seed map."""
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & _MASK64
    return h


def sample_seed(key: str) -> int:
    return fnv1a64(key.encode("utf-8"))


class SplitMix64:
    """Tiny deterministic PRNG; one multiply-shift scramble per draw."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)


def seeded_permutation(seed: int, n: int) -> list[int]:
    """Fisher-Yates shuffle of 0..n-1 driven by a splitmix64 stream."""
    rng = SplitMix64(seed)
    perm = list(range(n))
    for i in range(n - 1, 0, -1):
        j = rng.next() % (i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return perm


# -- plans ---------------------------------------------------------------------


@dataclass
class RetentionPlan:
    """Which patch indices a sample keeps (0-based, sorted ascending)."""

    strategy: str
    n_tokens: int
    indices: np.ndarray
    r: float | None = None
    tau: float | None = None
    seed: int | None = None

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)

    @property
    def k(self) -> int:
        return int(self.indices.size)

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.n_tokens, dtype=np.int8)
        m[self.indices] = 1
        return m

    def to_json(self) -> str:
        return json.dumps(
            {
                "strategy": self.strategy,
                "r": self.r,
                "tau": self.tau,
                "n": self.n_tokens,
                "indices": [int(i) for i in self.indices],
                "seed": self.seed,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "RetentionPlan":
        obj = json.loads(text)
        return cls(
            strategy=obj["strategy"],
            n_tokens=obj["n"],
            indices=np.asarray(obj["indices"], dtype=np.int64),
            r=obj.get("r"),
            tau=obj.get("tau"),
            seed=obj.get("seed"),
        )


def full_plan(n_tokens: int) -> RetentionPlan:
    """The identity plan: every patch retained."""
    return RetentionPlan("ms1", n_tokens, np.arange(n_tokens), r=1.0)


def _retained_count(r: float, n: int) -> int:
    if not 0.0 < r <= 1.0:
        raise ValueError(f"retention ratio must be in (0, 1], got {r}")
    k = int(np.floor(r * n))
    if k < 1:
        raise ValueError(
            f"retention ratio {r} keeps zero of {n} patches; "
            f"the smallest usable ratio is {1.0 / n:.4g}"
        )
    return k


def plan_uniform_random(key: str, r: float, n_tokens: int) -> RetentionPlan:
    """Uniform random masking: first k entries of a seeded permutation."""
    k = _retained_count(r, n_tokens)
    seed = sample_seed(key)
    perm = seeded_permutation(seed, n_tokens)
    return RetentionPlan(
        "ms1", n_tokens, np.sort(np.asarray(perm[:k])), r=r, seed=seed
    )


# -- similarity ------------------------------------------------------------------


@dataclass
class SimilarityMatrix:
    """Pixel-space cosine similarities between a sample's patches.

    ``mean_similarity`` averages each row including the diagonal (the
    farthest-first seeding statistic); ``max_offdiagonal`` is each token's
    highest similarity to any *other* token (the threshold predicate).
    Zero-norm patches have undefined cosines; they are pinned to 0 against
    everything (diagonal 1), i.e. treated as maximally diverse.
    """

    values: np.ndarray
    mean_similarity: np.ndarray = field(init=False)
    max_offdiagonal: np.ndarray = field(init=False)

    def __post_init__(self):
        s = self.values
        self.mean_similarity = s.mean(axis=1)
        if s.shape[0] > 1:
            hollow = s.copy()
            np.fill_diagonal(hollow, -np.inf)
            self.max_offdiagonal = hollow.max(axis=1)
        else:
            self.max_offdiagonal = np.full(s.shape[0], -np.inf)

    @property
    def n_tokens(self) -> int:
        return self.values.shape[0]


def similarity_matrix(patches: PatchGrid | np.ndarray) -> SimilarityMatrix:
    """Cosine similarities over flattened patch pixel vectors."""
    vectors = patches.vectors if isinstance(patches, PatchGrid) else np.asarray(patches)
    vectors = vectors.astype(np.float64, copy=False)
    norms = np.linalg.norm(vectors, axis=1)
    safe = np.where(norms > 0.0, norms, 1.0)
    unit = vectors / safe[:, None]
    s = unit @ unit.T
    s = np.clip((s + s.T) / 2.0, -1.0, 1.0)  # exact symmetry despite BLAS order
    s[norms == 0.0, :] = 0.0
    s[:, norms == 0.0] = 0.0
    np.fill_diagonal(s, 1.0)
    return SimilarityMatrix(s)


# -- diversity strategies ----------------------------------------------------------


def plan_diversity(sim: SimilarityMatrix, r: float) -> RetentionPlan:
    """Greedy farthest-first selection of the k most diverse patches."""
    n = sim.n_tokens
    k = _retained_count(r, n)
    order = diversity_selection_order(sim, k)
    return RetentionPlan("ms2", n, np.sort(np.asarray(order)), r=r)


def diversity_selection_order(sim: SimilarityMatrix, k: int) -> list[int]:
    """The farthest-first traversal itself, in selection order.

    Seeds at the lowest mean similarity, then repeatedly adds the candidate
    with the smallest maximum similarity to the selected set; ties break to
    the lowest index (numpy argmin already does).
    """
    s = sim.values
    first = int(np.argmin(sim.mean_similarity))
    order = [first]
    dist = s[:, first].copy()  # d_i = max similarity to the selected set
    dist[first] = np.inf
    while len(order) < k:
        nxt = int(np.argmin(dist))
        order.append(nxt)
        np.maximum(dist, s[:, nxt], out=dist)
        dist[nxt] = np.inf
    return order


def plan_thresholded(sim: SimilarityMatrix, tau: float) -> RetentionPlan:
    """Keep token i iff max_{j != i} S_ij < tau; never returns an empty set.

    Exact duplicates have similarity 1 and therefore knock each other out
    for every tau <= 1. If the predicate empties the whole set (an
    all-duplicates scene), the single token with the lowest mean similarity
    is kept so the transformer always has input.
    """
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"similarity threshold must be in (0, 1], got {tau}")
    retained = np.flatnonzero(sim.max_offdiagonal < tau)
    if retained.size == 0:
        retained = np.asarray([int(np.argmin(sim.mean_similarity))])
    return RetentionPlan("ms3", sim.n_tokens, retained, tau=tau)


# -- batch collation -----------------------------------------------------------------


@dataclass
class TokenBatch:
    """Padded retained-token tensors with key-padding attention masks.

    ``values`` is (B, L, D) with rows beyond each sample's count zeroed;
    ``attn_mask`` is (B, L) binary with exactly ``counts[b]`` ones,
    left-justified; ``index_matrix`` records each row's original grid
    position (padding rows point at 0 but are masked out everywhere).
    """

    values: Tensor
    attn_mask: np.ndarray
    counts: np.ndarray
    index_matrix: np.ndarray

    @property
    def seq_len(self) -> int:
        return self.values.shape[1]

    @property
    def batch_size(self) -> int:
        return self.values.shape[0]


def plan_index_matrix(
    plans: list[RetentionPlan],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Left-justified (B, L) index matrix, row mask, and counts for a batch."""
    counts = np.asarray([p.k for p in plans], dtype=np.int64)
    n = plans[0].n_tokens
    seq_len = min(int(counts.max()), n)
    index_matrix = np.zeros((len(plans), seq_len), dtype=np.int64)
    row_mask = np.zeros((len(plans), seq_len), dtype=np.float64)
    for b, plan in enumerate(plans):
        if plan.n_tokens != n:
            raise ValueError("all plans in a batch must share the token count")
        index_matrix[b, : plan.k] = plan.indices
        row_mask[b, : plan.k] = 1.0
    return index_matrix, row_mask, counts


def collate(tape: Tape, tokens, plans: list[RetentionPlan]) -> TokenBatch:
    """Gather retained token rows, pad with zeros, build attention masks.

    ``tokens`` is (B, N, D) embedded patch tokens (class token excluded);
    the batch sequence length is min(max_b k_b, N).
    """
    tokens = tape._wrap(tokens)
    index_matrix, row_mask, counts = plan_index_matrix(plans)
    gathered = tape.gather_rows(tokens, index_matrix)
    values = tape.mul(gathered, row_mask[:, :, None])
    return TokenBatch(values, row_mask.astype(np.int8), counts, index_matrix)


def ms3_thresholded(
    tape: Tape, sims: list[SimilarityMatrix], tau: float, tokens
) -> TokenBatch:
    """Thresholded diversity masking over a batch of embedded tokens."""
    plans = [plan_thresholded(s, tau) for s in sims]
    return collate(tape, tokens, plans)


# -- threshold calibration --------------------------------------------------------------


def calibrate_threshold(
    grids, taus
) -> list[tuple[float, float, int]]:
    """Mean retention ratio per threshold over a sample of patch grids.

    Returns rows (tau, mean_retention, n_samples); retention is
    non-decreasing in tau because the keep-predicate is.
    """
    sims = [similarity_matrix(g) for g in grids]
    if not sims:
        raise ValueError("calibration needs at least one sample")
    rows = []
    for tau in taus:
        ratios = [plan_thresholded(s, tau).k / s.n_tokens for s in sims]
        rows.append((float(tau), float(np.mean(ratios)), len(sims)))
    return rows


# -- mask rendering -----------------------------------------------------------------------


def mask_to_pgm(plan: RetentionPlan, grid_hw: tuple[int, int], patch_size: int = 1) -> bytes:
    """Binary PGM (P5) image of the retention mask; retained patches white."""
    gh, gw = grid_hw
    if gh * gw != plan.n_tokens:
        raise ValueError(
            f"grid {gh}x{gw} does not hold {plan.n_tokens} patches"
        )
    cells = plan.mask.reshape(gh, gw).astype(np.uint8) * np.uint8(255)
    pixels = np.repeat(np.repeat(cells, patch_size, axis=0), patch_size, axis=1)
    header = f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode("ascii")
    return header + pixels.tobytes()
