"""Instance builders for the gradient suite, shared by the per-op tests and
the acceptance run."""

from __future__ import annotations

import numpy as np

from rvit.autodiff import parameter


def _weighted(tape, out, w):
    return tape.sum(tape.mul(out, w))


def build_op_instance(name: str, rng: np.random.Generator):
    """One random small instance of a differentiable op: (build_fn, leaves)."""
    if name == "matmul":
        a, b = parameter(rng.normal(size=(2, 3))), parameter(rng.normal(size=(3, 2)))
        w = rng.normal(size=(2, 2))
        return lambda t: _weighted(t, t.matmul(a, b), w), [a, b]
    if name == "matmul_batched":
        a = parameter(rng.normal(size=(2, 2, 3)))
        b = parameter(rng.normal(size=(3, 2)))  # broadcast over the batch
        w = rng.normal(size=(2, 2, 2))
        return lambda t: _weighted(t, t.matmul(a, b), w), [a, b]
    if name == "add_broadcast":
        a, b = parameter(rng.normal(size=(3, 4))), parameter(rng.normal(size=4))
        w = rng.normal(size=(3, 4))
        return lambda t: _weighted(t, t.add(a, b), w), [a, b]
    if name == "mul":
        a, b = parameter(rng.normal(size=(3, 4))), parameter(rng.normal(size=(3, 4)))
        w = rng.normal(size=(3, 4))
        return lambda t: _weighted(t, t.mul(a, b), w), [a, b]
    if name == "scale":
        a = parameter(rng.normal(size=(3, 4)))
        w = rng.normal(size=(3, 4))
        return lambda t: _weighted(t, t.scale(a, -1.7), w), [a]
    if name == "reshape":
        a = parameter(rng.normal(size=(3, 4)))
        w = rng.normal(size=(2, 6))
        return lambda t: _weighted(t, t.reshape(a, (2, 6)), w), [a]
    if name == "swapaxes":
        a = parameter(rng.normal(size=(2, 3, 4)))
        w = rng.normal(size=(2, 4, 3))
        return lambda t: _weighted(t, t.swapaxes(a, 1, 2), w), [a]
    if name == "moveaxis":
        a = parameter(rng.normal(size=(2, 3, 4)))
        w = rng.normal(size=(4, 2, 3))
        return lambda t: _weighted(t, t.moveaxis(a, -1, 0), w), [a]
    if name == "broadcast_to":
        a = parameter(rng.normal(size=(1, 4)))
        w = rng.normal(size=(3, 4))
        return lambda t: _weighted(t, t.broadcast_to(a, (3, 4)), w), [a]
    if name == "concat":
        a, b = parameter(rng.normal(size=(2, 3))), parameter(rng.normal(size=(2, 2)))
        w = rng.normal(size=(2, 5))
        return lambda t: _weighted(t, t.concat([a, b], axis=1), w), [a, b]
    if name == "narrow":
        a = parameter(rng.normal(size=(4, 5)))
        w = rng.normal(size=(4, 2))
        return lambda t: _weighted(t, t.narrow(a, 1, 1, 2), w), [a]
    if name == "gather_rows":
        a = parameter(rng.normal(size=(2, 5, 3)))
        idx = rng.integers(0, 5, size=(2, 4))  # repeats exercise accumulation
        w = rng.normal(size=(2, 4, 3))
        return lambda t: _weighted(t, t.gather_rows(a, idx), w), [a]
    if name == "scatter_rows":
        a = parameter(rng.normal(size=(2, 3, 4)))
        idx = np.stack([rng.choice(6, size=3, replace=False) for _ in range(2)])
        w = rng.normal(size=(2, 6, 4))
        return lambda t: _weighted(t, t.scatter_rows(a, idx, 6), w), [a]
    if name == "gelu":
        a = parameter(rng.normal(size=(3, 4)))
        w = rng.normal(size=(3, 4))
        return lambda t: _weighted(t, t.gelu(a), w), [a]
    if name == "layernorm":
        a = parameter(rng.normal(size=(3, 6)))
        g = parameter(rng.normal(size=6))
        b = parameter(rng.normal(size=6))
        w = rng.normal(size=(3, 6))
        return lambda t: _weighted(t, t.layernorm(a, g, b), w), [a, g, b]
    if name == "masked_softmax":
        a = parameter(rng.normal(size=(3, 5)))
        mask = rng.integers(0, 2, size=(3, 5))
        mask[:, 0] = 1
        w = rng.normal(size=(3, 5))
        return lambda t: _weighted(t, t.masked_softmax(a, mask), w), [a]
    if name == "upsample_nearest":
        a = parameter(rng.normal(size=(2, 2, 3)))
        w = rng.normal(size=(4, 4, 3))
        return lambda t: _weighted(t, t.upsample_nearest(a, 2), w), [a]
    if name == "sum":
        a = parameter(rng.normal(size=(3, 4)))
        return lambda t: t.sum(a), [a]
    if name == "mean":
        a = parameter(rng.normal(size=(3, 4)))
        return lambda t: t.mean(a), [a]
    if name == "bce_with_logits":
        a = parameter(rng.normal(size=(3, 4)))
        targets = rng.integers(0, 2, size=(3, 4)).astype(float)
        return lambda t: t.bce_with_logits(a, targets), [a]
    if name == "ce_pixelwise":
        a = parameter(rng.normal(size=(2, 3, 2, 2)))
        labels = rng.integers(0, 3, size=(2, 2, 2))
        return lambda t: t.ce_pixelwise(a, labels, class_axis=1), [a]
    raise KeyError(name)


OP_NAMES = [
    "matmul",
    "matmul_batched",
    "add_broadcast",
    "mul",
    "scale",
    "reshape",
    "swapaxes",
    "moveaxis",
    "broadcast_to",
    "concat",
    "narrow",
    "gather_rows",
    "scatter_rows",
    "gelu",
    "layernorm",
    "masked_softmax",
    "upsample_nearest",
    "sum",
    "mean",
    "bce_with_logits",
    "ce_pixelwise",
]
