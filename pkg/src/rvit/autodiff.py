"""Minimal dense-tensor kernel with reverse-mode automatic differentiation.

Everything runs in float64 on numpy arrays. Differentiable operations are
methods on a :class:`Tape`; each call computes the forward value eagerly and,
when gradients are needed, appends a backward closure to the tape. Calling
``tape.backward(loss)`` replays the closures in exact reverse execution order
and accumulates gradients into the ``grad`` slot of every tensor that asked
for them.

There is no graph optimization, no fused kernels, and no implicit global
state: one tape per forward pass, and independent tapes can run concurrently
on disjoint data.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

LAYERNORM_EPS = 1e-6


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an operation."""


class Tensor:
    """A float64 array with an optional gradient slot.

    ``requires_grad`` marks leaves (parameters) whose gradients should be
    accumulated; tensors produced by tape ops inherit the flag from their
    inputs so the backward sweep knows where to stop.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray, own: bool = False) -> None:
        # own=True promises g is a fresh array no one else will touch
        if self.grad is None:
            self.grad = g if own else g.copy()
        else:
            self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def parameter(data) -> Tensor:
    """A leaf tensor that accumulates gradients."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _matmul_flops(a_shape, b_shape, out_shape) -> int:
    # 2*m*n*k per matrix product, times the broadcast batch count.
    k = a_shape[-1]
    m = out_shape[-2] if len(out_shape) >= 2 else 1
    n = out_shape[-1]
    batch = 1
    for d in out_shape[:-2]:
        batch *= d
    return 2 * batch * m * n * k


class Tape:
    """Execution-ordered record of differentiable operations.

    ``record=False`` gives a pure inference tape: values are computed but no
    backward closures are stored and no output requires gradients.

    ``matmul_flops`` counts 2*m*n*k for every matrix product executed through
    this tape (batched products count every batch element); it is the runtime
    oracle the analytic cost model is checked against.
    """

    def __init__(self, record: bool = True):
        self._record = record
        self._steps: list[tuple[Tensor, object]] = []
        self.matmul_flops = 0

    def __len__(self) -> int:
        return len(self._steps)

    # -- plumbing ---------------------------------------------------------

    def _wrap(self, x) -> Tensor:
        return x if isinstance(x, Tensor) else Tensor(x)

    def _make(self, data, inputs) -> Tensor:
        needs = self._record and any(t.requires_grad for t in inputs)
        return Tensor(data, requires_grad=needs)

    def _push(self, out: Tensor, backward) -> None:
        if out.requires_grad:
            self._steps.append((out, backward))

    def backward(self, root: Tensor, seed: np.ndarray | None = None) -> None:
        """Run the reverse sweep from ``root`` (scalar unless ``seed`` given)."""
        if not self._record:
            raise RuntimeError("cannot backpropagate through a non-recording tape")
        if seed is None:
            if root.size != 1:
                raise ShapeError(
                    f"backward root must be scalar, got shape {root.shape}"
                )
            seed = np.ones_like(root.data)
        root._accumulate(np.asarray(seed, dtype=np.float64))
        for out, fn in reversed(self._steps):
            if out.grad is not None:
                fn(out.grad)

    # -- core linear algebra ----------------------------------------------

    def constant(self, data) -> Tensor:
        return Tensor(data)

    def matmul(self, a, b) -> Tensor:
        a, b = self._wrap(a), self._wrap(b)
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError("matmul requires tensors with at least 2 dimensions")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(
                f"matmul inner extents differ: {a.shape} x {b.shape}"
            )
        data = a.data @ b.data
        self.matmul_flops += _matmul_flops(a.shape, b.shape, data.shape)
        out = self._make(data, (a, b))

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape), own=True)
            if b.requires_grad:
                b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape), own=True)

        self._push(out, backward)
        return out

    def add(self, a, b) -> Tensor:
        a, b = self._wrap(a), self._wrap(b)
        out = self._make(a.data + b.data, (a, b))

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                ga = _unbroadcast(g, a.shape)
                a._accumulate(ga, own=ga is not g)
            if b.requires_grad:
                gb = _unbroadcast(g, b.shape)
                b._accumulate(gb, own=gb is not g)

        self._push(out, backward)
        return out

    def mul(self, a, b) -> Tensor:
        a, b = self._wrap(a), self._wrap(b)
        out = self._make(a.data * b.data, (a, b))

        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.shape), own=True)
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.shape), own=True)

        self._push(out, backward)
        return out

    def scale(self, x, c: float) -> Tensor:
        x = self._wrap(x)
        out = self._make(x.data * c, (x,))

        def backward(g: np.ndarray) -> None:
            if x.requires_grad:
                x._accumulate(g * c, own=True)

        self._push(out, backward)
        return out

    # -- shape manipulation -------------------------------------------------

    def reshape(self, x, shape) -> Tensor:
        x = self._wrap(x)
        out = self._make(x.data.reshape(shape), (x,))

        def backward(g: np.ndarray) -> None:
            if x.requires_grad:
                x._accumulate(g.reshape(x.shape))

        self._push(out, backward)
        return out

    def swapaxes(self, x, axis1: int, axis2: int) -> Tensor:
        x = self._wrap(x)
        out = self._make(np.ascontiguousarray(np.swapaxes(x.data, axis1, axis2)), (x,))

        def backward(g: np.ndarray) -> None:
            if x.requires_grad:
                x._accumulate(np.swapaxes(g, axis1, axis2))

        self._push(out, backward)
        return out

    def moveaxis(self, x, src: int, dst: int) -> Tensor:
        x = self._wrap(x)
        out = self._make(np.ascontiguousarray(np.moveaxis(x.data, src, dst)), (x,))

        def backward(g: np.ndarray) -> None:
            if x.requires_grad:
                x._accumulate(np.moveaxis(g, dst, src))

        self._push(out, backward)
        return out

    def broadcast_to(self, x, shape) -> Tensor:
        x = self._wrap(x)
        out = self._make(np.broadcast_to(x.data, shape).copy(), (x,))

        def backward(g: np.ndarray) -> None:
            if x.requires_grad:
                x._accumulate(_unbroadcast(g, x.shape))

        self._push(out, backward)
        return out

    def concat(self, parts, axis: int) -> Tensor:
        parts = [self._wrap(p) for p in parts]
        out = self._make(np.concatenate([p.data for p in parts], axis=axis), parts)
        sizes = [p.shape[axis] for p in parts]

        def backward(g: np.ndarray) -> None:
            offset = 0
            for p, n in zip(parts, sizes):
                if p.requires_grad:
                    idx = [slice(None)] * g.ndim
                    idx[axis] = slice(offset, offset + n)
                    p._accumulate(g[tuple(idx)])
                offset += n

        self._push(out, backward)
        return out

    def narrow(self, x, axis: int, start: int, length: int) -> Tensor:
        x = self._wrap(x)
        idx = [slice(None)] * x.ndim
        idx[axis] = slice(start, start + length)
        idx = tuple(idx)
        out = self._make(x.data[idx].copy(), (x,))

        def backward(g: np.ndarray) -> None:
            if x.requires_grad:
                gx = np.zeros_like(x.data)
                gx[idx] = g
                x._accumulate(gx, own=True)

        self._push(out, backward)
        return out

    def gather_rows(self, x, index: np.ndarray) -> Tensor:
        """Select rows per batch element: ``out[b, j] = x[b, index[b, j]]``.

        ``x`` is (B, N, D), ``index`` is an integer (B, L) array. Backward
        scatter-adds, so repeated indices accumulate correctly.
        """
        x = self._wrap(x)
        index = np.asarray(index)
        if x.ndim != 3 or index.ndim != 2 or index.shape[0] != x.shape[0]:
            raise ShapeError(
                f"gather_rows expects (B,N,D) values and (B,L) index, "
                f"got {x.shape} and {index.shape}"
            )
        rows = np.arange(x.shape[0])[:, None]
        out = self._make(x.data[rows, index], (x,))

        def backward(g: np.ndarray) -> None:
            if x.requires_grad:
                gx = np.zeros_like(x.data)
                np.add.at(gx, (rows, index), g)
                x._accumulate(gx, own=True)

        self._push(out, backward)
        return out

    def scatter_rows(self, x, index: np.ndarray, n_rows: int) -> Tensor:
        """Place rows at given positions, zeros elsewhere (scatter-add).

        ``x`` is (B, L, D), ``index`` is (B, L); returns (B, n_rows, D) with
        ``out[b, index[b, j]] += x[b, j]``.
        """
        x = self._wrap(x)
        index = np.asarray(index)
        if x.ndim != 3 or index.shape != x.shape[:2]:
            raise ShapeError(
                f"scatter_rows expects (B,L,D) values and (B,L) index, "
                f"got {x.shape} and {index.shape}"
            )
        rows = np.arange(x.shape[0])[:, None]
        data = np.zeros((x.shape[0], n_rows, x.shape[2]), dtype=np.float64)
        np.add.at(data, (rows, index), x.data)
        out = self._make(data, (x,))

        def backward(g: np.ndarray) -> None:
            if x.requires_grad:
                x._accumulate(g[rows, index], own=True)

        self._push(out, backward)
        return out

    # -- nonlinearities and normalization -----------------------------------

    def gelu(self, x) -> Tensor:
        x = self._wrap(x)
        cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
        out = self._make(x.data * cdf, (x,))

        def backward(g: np.ndarray) -> None:
            if x.requires_grad:
                pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
                x._accumulate(g * (cdf + x.data * pdf), own=True)

        self._push(out, backward)
        return out

    def layernorm(self, x, gain, bias) -> Tensor:
        """Normalize over the last axis; variance floored by 1e-6.

        Constant inputs therefore map to ``bias`` exactly (zero with unit
        gain and zero bias).
        """
        x, gain, bias = self._wrap(x), self._wrap(gain), self._wrap(bias)
        if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
            raise ShapeError(
                f"layernorm gain/bias must match last extent {x.shape[-1:]}, "
                f"got {gain.shape} and {bias.shape}"
            )
        mu = x.data.mean(axis=-1, keepdims=True)
        centered = x.data - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + LAYERNORM_EPS)
        xhat = centered * inv_std
        out = self._make(xhat * gain.data + bias.data, (x, gain, bias))
        reduce_axes = tuple(range(x.ndim - 1))

        def backward(g: np.ndarray) -> None:
            if gain.requires_grad:
                gain._accumulate((g * xhat).sum(axis=reduce_axes), own=True)
            if bias.requires_grad:
                bias._accumulate(g.sum(axis=reduce_axes), own=True)
            if x.requires_grad:
                gh = g * gain.data
                m1 = gh.mean(axis=-1, keepdims=True)
                m2 = (gh * xhat).mean(axis=-1, keepdims=True)
                x._accumulate(inv_std * (gh - m1 - xhat * m2), own=True)

        self._push(out, backward)
        return out

    def masked_softmax(self, logits, mask: np.ndarray | None = None) -> Tensor:
        """Softmax over the last axis; masked positions are exactly zero.

        ``mask`` is a binary array broadcastable to ``logits`` (1 = keep).
        Masked positions receive -inf before normalization, so each row sums
        to 1 over its unmasked entries. Every row must keep at least one
        position.
        """
        logits = self._wrap(logits)
        if mask is None:
            keep = None
            x = logits.data
        else:
            keep = np.broadcast_to(np.asarray(mask) != 0, logits.shape)
            if not keep.any(axis=-1).all():
                raise ValueError("masked_softmax: a row has no unmasked positions")
            x = np.where(keep, logits.data, -np.inf)
        x = x - x.max(axis=-1, keepdims=True)
        e = np.exp(x)
        probs = e / e.sum(axis=-1, keepdims=True)
        out = self._make(probs, (logits,))

        def backward(g: np.ndarray) -> None:
            if logits.requires_grad:
                inner = (g * probs).sum(axis=-1, keepdims=True)
                logits._accumulate(probs * (g - inner), own=True)

        self._push(out, backward)
        return out

    def upsample_nearest(self, x, factor: int) -> Tensor:
        """Nearest-neighbor upsampling of the two axes before the last.

        ``x`` is (..., h, w, C); each cell is replicated into a
        factor x factor block.
        """
        x = self._wrap(x)
        if x.ndim < 3:
            raise ShapeError("upsample_nearest expects at least (h, w, C)")
        data = np.repeat(np.repeat(x.data, factor, axis=-3), factor, axis=-2)
        out = self._make(data, (x,))
        h, w = x.shape[-3], x.shape[-2]

        def backward(g: np.ndarray) -> None:
            if x.requires_grad:
                shape = g.shape[:-3] + (h, factor, w, factor, g.shape[-1])
                x._accumulate(g.reshape(shape).sum(axis=(-4, -2)), own=True)

        self._push(out, backward)
        return out

    # -- reductions and losses ----------------------------------------------

    def sum(self, x) -> Tensor:
        x = self._wrap(x)
        out = self._make(np.asarray(x.data.sum()), (x,))

        def backward(g: np.ndarray) -> None:
            if x.requires_grad:
                x._accumulate(np.full_like(x.data, float(g)), own=True)

        self._push(out, backward)
        return out

    def mean(self, x) -> Tensor:
        x = self._wrap(x)
        out = self._make(np.asarray(x.data.mean()), (x,))
        inv_n = 1.0 / x.size

        def backward(g: np.ndarray) -> None:
            if x.requires_grad:
                x._accumulate(np.full_like(x.data, float(g) * inv_n), own=True)

        self._push(out, backward)
        return out

    def bce_with_logits(self, logits, targets) -> Tensor:
        """Mean sigmoid binary cross-entropy, numerically stable."""
        logits, targets = self._wrap(logits), self._wrap(targets)
        if logits.shape != targets.shape:
            raise ShapeError(
                f"bce_with_logits shapes differ: {logits.shape} vs {targets.shape}"
            )
        x, t = logits.data, targets.data
        loss = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))
        out = self._make(np.asarray(loss.mean()), (logits,))
        inv_n = 1.0 / logits.size

        def backward(g: np.ndarray) -> None:
            if logits.requires_grad:
                sig = 1.0 / (1.0 + np.exp(-x))
                logits._accumulate((sig - t) * (float(g) * inv_n), own=True)

        self._push(out, backward)
        return out

    def ce_pixelwise(self, logits, labels: np.ndarray, class_axis: int = -1) -> Tensor:
        """Mean cross-entropy over all positions; labels are class indices."""
        logits = self._wrap(logits)
        labels = np.asarray(labels)
        x = np.moveaxis(logits.data, class_axis, -1)
        if labels.shape != x.shape[:-1]:
            raise ShapeError(
                f"ce_pixelwise labels shape {labels.shape} does not match "
                f"positions {x.shape[:-1]}"
            )
        if labels.min() < 0 or labels.max() >= x.shape[-1]:
            raise ValueError("ce_pixelwise: label index out of range")
        m = x.max(axis=-1, keepdims=True)
        lse = m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True))
        picked = np.take_along_axis(x, labels[..., None], axis=-1)
        out = self._make(np.asarray((lse - picked).mean()), (logits,))
        count = labels.size

        def backward(g: np.ndarray) -> None:
            if logits.requires_grad:
                probs = np.exp(x - lse)
                hit = np.take_along_axis(probs, labels[..., None], axis=-1)
                np.put_along_axis(probs, labels[..., None], hit - 1.0, axis=-1)
                probs *= float(g) / count
                gx = np.ascontiguousarray(np.moveaxis(probs, -1, class_axis))
                logits._accumulate(gx, own=True)

        self._push(out, backward)
        return out


def sgd_step(params, lr: float) -> None:
    """Plain gradient descent with a fixed step; clears gradients."""
    for p in params:
        if p.grad is not None:
            p.data -= lr * p.grad
            p.grad = None
