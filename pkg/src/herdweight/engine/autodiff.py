"""Reverse-mode autodiff over numpy float64 arrays.

A Tensor wraps an ndarray plus an optional backward closure and parent
references. Graphs are only recorded while some input requires gradients,
so eval-mode forward passes retain nothing. Backward closures receive the
output gradient as an argument and never capture their own result node, so
a released graph frees its arrays immediately by reference counting.
backward() runs the closures in reverse topological order (each node's
gradient accumulates exactly once) and tears the graph down as it goes;
a graph is single-use.
"""

from __future__ import annotations

import ctypes
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ShapeError


def _tune_allocator() -> None:
    """Keep large freed blocks on the heap instead of returning them to the
    OS; refaulting hundreds of MB per training step dominates runtime on
    glibc otherwise. Best effort, silently skipped off glibc."""
    try:
        libc = ctypes.CDLL("libc.so.6", use_errno=True)
        libc.mallopt(-3, 1 << 29)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 29)  # M_TRIM_THRESHOLD
    except Exception:
        pass


_tune_allocator()


class Tensor:
    __slots__ = ("data", "grad", "parents", "op", "requires_grad", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents: tuple[Tensor, ...] = ()
        self.op = "leaf"
        self.requires_grad = requires_grad
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        tag = self.name or self.op
        return f"Tensor({tag}, shape={self.data.shape}, grad={self.requires_grad})"

    def accumulate_grad(self, g: np.ndarray, own: bool = False) -> None:
        """Add g to the gradient. own=True lets the tensor adopt g as its
        buffer without copying; callers must not hand the same array to two
        destinations."""
        if self.grad is None:
            self.grad = g if own else np.array(g)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Backpropagate from this (scalar) node, consuming the graph."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.data.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                stack.append((p, False))
        self.accumulate_grad(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)
                node._backward = None
                node.parents = ()
                node.grad = None


def _result(data: np.ndarray, parents: Sequence[Tensor], op: str,
            backward: Callable[[np.ndarray], None] | None) -> Tensor:
    """Build an op result; record the graph only if some parent needs it."""
    out = Tensor(data)
    out.op = op
    if backward is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out._backward = backward
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def run(g):
        if a.requires_grad:
            ga = _unbroadcast(g, a.data.shape)
            a.accumulate_grad(ga, own=ga is not g)
        if b.requires_grad:
            gb = _unbroadcast(g, b.data.shape)
            b.accumulate_grad(gb, own=gb is not g)

    return _result(a.data + b.data, (a, b), "add", run)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def run(g):
        if a.requires_grad:
            ga = _unbroadcast(g, a.data.shape)
            a.accumulate_grad(ga, own=ga is not g)
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.data.shape), own=True)

    return _result(a.data - b.data, (a, b), "sub", run)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def run(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape), own=True)
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape), own=True)

    return _result(a.data * b.data, (a, b), "mul", run)


def scale_shift(x: Tensor, scale: float, shift: float) -> Tensor:
    """y = x * scale + shift with constant scalars."""

    def run(g):
        x.accumulate_grad(g * scale, own=True)

    return _result(x.data * scale + shift, (x,), "scale_shift", run)


# ---------------------------------------------------------------------------
# linear algebra and layout

def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """y = x @ w (+ b) where x is [..., in], w is [in, out], b is [out].

    The leading axes of x are arbitrary; the weight gradient folds them.
    """
    if x.data.shape[-1] != w.data.shape[0]:
        raise ShapeError(f"linear: x {x.data.shape} incompatible with w {w.data.shape}")
    if b is not None and b.data.shape != (w.data.shape[1],):
        raise ShapeError(f"linear: bias {b.data.shape} incompatible with w {w.data.shape}")
    data = np.matmul(x.data, w.data)
    if b is not None:
        data += b.data

    def run(g):
        if x.requires_grad:
            x.accumulate_grad(np.matmul(g, w.data.T), own=True)
        if w.requires_grad:
            x2 = x.data.reshape(-1, x.data.shape[-1])
            g2 = g.reshape(-1, g.shape[-1])
            w.accumulate_grad(x2.T @ g2, own=True)
        if b is not None and b.requires_grad:
            b.accumulate_grad(g.reshape(-1, g.shape[-1]).sum(axis=0), own=True)

    parents = (x, w) if b is None else (x, w, b)
    return _result(data, parents, "linear", run)


def bmm(x: Tensor, t: Tensor) -> Tensor:
    """Batched product: x [B, n, d] @ t [B, d, d'] -> [B, n, d']."""
    if x.data.ndim != 3 or t.data.ndim != 3 or x.data.shape[-1] != t.data.shape[1] \
            or x.data.shape[0] != t.data.shape[0]:
        raise ShapeError(f"bmm: x {x.data.shape} incompatible with t {t.data.shape}")

    def run(g):
        if x.requires_grad:
            x.accumulate_grad(np.matmul(g, t.data.swapaxes(1, 2)), own=True)
        if t.requires_grad:
            t.accumulate_grad(np.matmul(x.data.swapaxes(1, 2), g), own=True)

    return _result(np.matmul(x.data, t.data), (x, t), "bmm", run)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    def run(g):
        x.accumulate_grad(g.reshape(x.data.shape), own=True)

    return _result(x.data.reshape(shape), (x,), "reshape", run)


def concat_last(parts: Iterable[Tensor]) -> Tensor:
    parts = list(parts)
    widths = [p.data.shape[-1] for p in parts]

    def run(g):
        offset = 0
        for p, w in zip(parts, widths):
            if p.requires_grad:
                # non-overlapping views of g; safe to adopt without copying
                p.accumulate_grad(g[..., offset:offset + w], own=True)
            offset += w

    return _result(np.concatenate([p.data for p in parts], axis=-1),
                   parts, "concat", run)


def gather_points(x: Tensor, idx: np.ndarray) -> Tensor:
    """Gather neighbor features: x [B, n, ch], idx [B, n, k] -> [B, n, k, ch]."""
    B, n, _ = x.data.shape
    if idx.shape[0] != B:
        raise ShapeError(f"gather: idx batch {idx.shape} does not match x {x.data.shape}")
    if idx.min() < 0 or idx.max() >= n:
        raise ShapeError(f"gather: neighbor index out of range [0, {n})")
    bi = np.arange(B)[:, None, None]

    def run(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx, (bi, idx), g)
        x.accumulate_grad(dx, own=True)

    return _result(x.data[bi, idx], (x,), "gather", run)


# ---------------------------------------------------------------------------
# activations and dropout

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def run(g):
        x.accumulate_grad(g * mask, own=True)

    return _result(np.where(mask, x.data, 0.0), (x,), "relu", run)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    mask = x.data > 0

    def run(g):
        x.accumulate_grad(g * np.where(mask, 1.0, slope), own=True)

    return _result(np.where(mask, x.data, slope * x.data), (x,), "leaky_relu", run)


def dropout(x: Tensor, p: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-p); identity in eval mode."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout with p > 0 needs a generator")
    keep = rng.random(x.data.shape) >= p
    scale = 1.0 / (1.0 - p)

    def run(g):
        x.accumulate_grad(g * keep * scale, own=True)

    return _result(np.where(keep, x.data * scale, 0.0), (x,), "dropout", run)


# ---------------------------------------------------------------------------
# reductions

def reduce_max(x: Tensor, axis: int) -> Tensor:
    """Max over one axis; gradient routes to the first attaining index."""
    if x.data.shape[axis] < 1:
        raise ShapeError(f"reduce_max over empty axis {axis} of {x.data.shape}")
    if x.data.ndim == 3 and axis == 1:
        # point-axis pooling is the hot case; stream it in one pass
        from . import _kernels
        B, _, ch = x.data.shape
        data = np.empty((B, ch))
        arg2 = np.empty((B, ch), dtype=np.int64)
        _kernels.maxpool_points(np.ascontiguousarray(x.data), data, arg2)
        arg = arg2[:, None, :]
    else:
        arg = np.expand_dims(x.data.argmax(axis=axis), axis)
        data = np.take_along_axis(x.data, arg, axis=axis).squeeze(axis)

    def run(g):
        dx = np.zeros_like(x.data)
        np.put_along_axis(dx, arg, np.expand_dims(g, axis), axis=axis)
        x.accumulate_grad(dx, own=True)

    return _result(data, (x,), "reduce_max", run)


def reduce_mean(x: Tensor, axis: int) -> Tensor:
    if x.data.shape[axis] < 1:
        raise ShapeError(f"reduce_mean over empty axis {axis} of {x.data.shape}")
    n = x.data.shape[axis]

    def run(g):
        x.accumulate_grad(np.repeat(np.expand_dims(g / n, axis), n, axis=axis), own=True)

    return _result(x.data.mean(axis=axis), (x,), "reduce_mean", run)


def pool_points(x: Tensor, kind: str) -> Tensor:
    """Pool [batch, points, ch] over the point axis; kind is 'max' or 'avg'."""
    if x.data.ndim != 3:
        raise ShapeError(f"pool_points expects [batch, points, ch], got {x.data.shape}")
    if kind == "max":
        return reduce_max(x, axis=1)
    if kind == "avg":
        return reduce_mean(x, axis=1)
    raise ValueError(f"unknown pooling kind {kind!r}")


def sum_all(x: Tensor) -> Tensor:
    def run(g):
        x.accumulate_grad(np.broadcast_to(g, x.data.shape).copy(), own=True)

    return _result(np.asarray(x.data.sum()), (x,), "sum", run)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size

    def run(g):
        x.accumulate_grad(np.broadcast_to(g / n, x.data.shape).copy(), own=True)

    return _result(np.asarray(x.data.mean()), (x,), "mean", run)


# ---------------------------------------------------------------------------
# losses (mean over the batch, exact backward)

def smooth_l1_loss(pred: Tensor, target: Tensor, beta: float = 1.0) -> Tensor:
    """Per element: 0.5 r^2 / beta if |r| < beta else |r| - 0.5 beta."""
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"loss shapes differ: {pred.data.shape} vs {target.data.shape}")
    if pred.data.size == 0:
        raise ValueError("loss over an empty batch")
    r = pred.data - target.data
    a = np.abs(r)
    small = a < beta
    per = np.where(small, 0.5 * r * r / beta, a - 0.5 * beta)
    n = pred.data.size

    def run(g):
        d = np.where(small, r / beta, np.sign(r)) * (g / n)
        if target.requires_grad:
            target.accumulate_grad(-d, own=True)
        if pred.requires_grad:
            pred.accumulate_grad(d, own=True)

    return _result(np.asarray(per.mean()), (pred, target), "smooth_l1", run)


def huber_loss(pred: Tensor, target: Tensor, delta: float = 1.0) -> Tensor:
    """Per element: 0.5 r^2 if |r| <= delta else delta (|r| - 0.5 delta)."""
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"loss shapes differ: {pred.data.shape} vs {target.data.shape}")
    if pred.data.size == 0:
        raise ValueError("loss over an empty batch")
    r = pred.data - target.data
    a = np.abs(r)
    small = a <= delta
    per = np.where(small, 0.5 * r * r, delta * (a - 0.5 * delta))
    n = pred.data.size

    def run(g):
        d = np.where(small, r, delta * np.sign(r)) * (g / n)
        if target.requires_grad:
            target.accumulate_grad(-d, own=True)
        if pred.requires_grad:
            pred.accumulate_grad(d, own=True)

    return _result(np.asarray(per.mean()), (pred, target), "huber", run)


# ---------------------------------------------------------------------------
# finite-difference checking

def gradient_check(fn, inputs: list[np.ndarray], h: float = 1e-5) -> float:
    """Max blended abs/rel error between autodiff and central differences.

    fn maps a list of Tensors to a scalar Tensor. Inputs should avoid the
    kink points of relu/|r| (probability zero for continuous draws).
    """
    tensors = [Tensor(x.copy(), requires_grad=True) for x in inputs]
    out = fn(tensors)
    out.backward()
    worst = 0.0
    for arr, t in zip(inputs, tensors):
        analytic = t.grad if t.grad is not None else np.zeros_like(arr)
        flat = arr.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            hi = float(fn([Tensor(x) for x in inputs]).data)
            flat[j] = orig - h
            lo = float(fn([Tensor(x) for x in inputs]).data)
            flat[j] = orig
            numeric = (hi - lo) / (2.0 * h)
            a = analytic.reshape(-1)[j]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst
