"""Dense float arrays with reverse-mode automatic differentiation.

Tensors wrap numpy arrays (float32 by default, float64 available for
numerical checks). Each operation records its inputs and a backward rule on
the output, so the graph is rebuilt on every forward pass; ``backward`` on a
scalar walks the recorded operations once in reverse topological order and
accumulates gradients, including across fan-out.

Shapes are whatever the encoder needs: plain 2D matrices plus an optional
leading batch dimension. Constant arrays (dropout masks, positional
encodings) enter as non-grad tensors, so gradients flow only through
surviving entries.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NumericError, ShapeError, UsageError

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph recording (eval / oracle paths)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, exc_type, exc, tb):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_rule")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype in (
                np.float32, np.float64) else np.float32
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward_rule = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        self.grad = g if self.grad is None else self.grad + g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def make_op(data: np.ndarray, parents, rule) -> Tensor:
    """Build an op output tensor; records parents/rule only when grads are live.

    ``rule(grad_out)`` must accumulate into each parent that requires_grad.
    Exposed so other modules can define fused operations.
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_rule = rule
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward_rule = None
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _sum_to_shape(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a gradient to ``shape`` by summing broadcast axes."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class ComputeGraph:
    """Ordered record of the operations reachable from a root tensor.

    Nodes are stored so every operation's inputs precede it; the backward
    sweep visits each node exactly once.
    """

    def __init__(self, root: Tensor):
        order = []
        visited = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.nodes = order  # topological: inputs before users

    def run_backward(self) -> None:
        for node in reversed(self.nodes):
            if node._backward_rule is not None and node.grad is not None:
                node._backward_rule(node.grad)


def backward(loss: Tensor) -> None:
    """Populate .grad on every requires_grad tensor reachable from ``loss``."""
    if loss.data.size != 1:
        raise UsageError(f"backward requires a scalar, got shape {loss.data.shape}")
    graph = ComputeGraph(loss)
    loss.grad = np.ones_like(loss.data)
    graph.run_backward()


# ---------------------------------------------------------------------------
# operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs 2D+ operands, got {a.data.shape} x {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.data.shape} x {b.data.shape}")
    out_data = a.data @ b.data

    def rule(g):
        if a.requires_grad:
            a._accumulate(_sum_to_shape(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        if b.requires_grad:
            b._accumulate(_sum_to_shape(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return make_op(out_data, (a, b), rule)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def rule(g):
        if a.requires_grad:
            a._accumulate(_sum_to_shape(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_sum_to_shape(g, b.data.shape))

    return make_op(out_data, (a, b), rule)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data

    def rule(g):
        if a.requires_grad:
            a._accumulate(_sum_to_shape(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_sum_to_shape(-g, b.data.shape))

    return make_op(out_data, (a, b), rule)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; used with non-grad tensors for constant masks."""
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def rule(g):
        if a.requires_grad:
            a._accumulate(_sum_to_shape(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_sum_to_shape(g * a.data, b.data.shape))

    return make_op(out_data, (a, b), rule)


def scale(a: Tensor, s: float) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data * a.data.dtype.type(s)

    def rule(g):
        a._accumulate(g * a.data.dtype.type(s))

    return make_op(out_data, (a,), rule)


def transpose_last(a: Tensor) -> Tensor:
    out_data = np.swapaxes(a.data, -1, -2)

    def rule(g):
        a._accumulate(np.swapaxes(g, -1, -2))

    return make_op(out_data, (a,), rule)


def reshape(a: Tensor, shape) -> Tensor:
    out_data = a.data.reshape(shape)

    def rule(g):
        a._accumulate(g.reshape(a.data.shape))

    return make_op(out_data, (a,), rule)


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous slice along the last axis (head split)."""
    out_data = a.data[..., start:stop]

    def rule(g):
        full = np.zeros_like(a.data)
        full[..., start:stop] = g
        a._accumulate(full)

    return make_op(out_data, (a,), rule)


def concat_last(tensors) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=-1)
    widths = [t.data.shape[-1] for t in tensors]

    def rule(g):
        offset = 0
        for t, w in zip(tensors, widths):
            if t.requires_grad:
                t._accumulate(g[..., offset:offset + w])
            offset += w

    return make_op(out_data, tuple(tensors), rule)


def sum_all(a: Tensor) -> Tensor:
    out_data = np.asarray(a.data.sum(), dtype=a.data.dtype)

    def rule(g):
        a._accumulate(np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=True))

    return make_op(out_data, (a,), rule)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out_data = np.asarray(a.data.mean(), dtype=a.data.dtype)

    def rule(g):
        a._accumulate(np.full(a.data.shape, g / n, dtype=a.data.dtype))

    return make_op(out_data, (a,), rule)


def mean_axis(a: Tensor, axis: int) -> Tensor:
    out_data = a.data.mean(axis=axis)
    n = a.data.shape[axis]

    def rule(g):
        a._accumulate(np.repeat(np.expand_dims(g / n, axis), n, axis=axis))

    return make_op(out_data, (a,), rule)


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0)

    def rule(g):
        a._accumulate(g * (a.data > 0))

    return make_op(out_data, (a,), rule)


_GELU_C0 = math.sqrt(2.0 / math.pi)
_GELU_C1 = 0.044715


def gelu(a: Tensor) -> Tensor:
    """Smooth GELU (tanh form)."""
    x = a.data
    u = _GELU_C0 * (x + _GELU_C1 * x * x * x)
    t = np.tanh(u)
    out_data = (0.5 * x * (1.0 + t)).astype(x.dtype)

    def rule(g):
        du = _GELU_C0 * (1.0 + 3.0 * _GELU_C1 * x * x)
        local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
        a._accumulate((g * local).astype(x.dtype))

    return make_op(out_data, (a,), rule)


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax along the last axis, max-subtracted for stability."""
    x = a.data
    if x.size == 0:
        return a
    if not np.all(np.isfinite(x)):
        raise NumericError("softmax_rows: non-finite input")
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def rule(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        a._accumulate((out_data * (g - dot)).astype(x.dtype))

    return make_op(out_data, (a,), rule)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row (last axis) to mean 0 / variance 1, then affine."""
    x = a.data
    d = x.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(
            f"layer_norm affine shapes {gain.data.shape}/{bias.data.shape} "
            f"do not match feature width {d}")
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    out_data = (gain.data * xhat + bias.data).astype(x.dtype)

    def rule(g):
        if gain.requires_grad:
            gain._accumulate(_sum_to_shape(g * xhat, gain.data.shape).astype(x.dtype))
        if bias.requires_grad:
            bias._accumulate(_sum_to_shape(g, bias.data.shape).astype(x.dtype))
        if a.requires_grad:
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            a._accumulate((inv * (dxhat - m1 - xhat * m2)).astype(x.dtype))

    return make_op(out_data, (a, gain, bias), rule)


def l1_loss(pred: Tensor, target: Tensor, weights: np.ndarray | None = None) -> Tensor:
    """Mean absolute elementwise difference, optionally cell-weighted.

    ``weights`` is a constant 0/1 (or nonnegative) array; the loss is
    sum(w * |pred - target|) / sum(w).
    """
    target = _as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise ShapeError(
            f"l1_loss shape mismatch: {pred.data.shape} vs {target.data.shape}")
    diff = pred.data - target.data
    if weights is None:
        denom = diff.size
        out_data = np.asarray(np.abs(diff).sum() / denom, dtype=pred.data.dtype)
    else:
        weights = np.broadcast_to(np.asarray(weights, dtype=pred.data.dtype), diff.shape)
        denom = float(weights.sum())
        if denom <= 0:
            raise UsageError("l1_loss: weight mask sums to zero")
        out_data = np.asarray((weights * np.abs(diff)).sum() / denom, dtype=pred.data.dtype)

    def rule(g):
        base = np.sign(diff) / denom
        if weights is not None:
            base = base * weights
        if pred.requires_grad:
            pred._accumulate((g * base).astype(pred.data.dtype))
        if target.requires_grad:
            target._accumulate((-g * base).astype(pred.data.dtype))

    return make_op(out_data, (pred, target), rule)


def cross_entropy_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross entropy of rows of logits against integer labels."""
    x = logits.data
    if x.ndim != 2:
        raise ShapeError(f"cross_entropy_logits expects N x C logits, got {x.shape}")
    n = x.shape[0]
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match logits rows {n}")
    shifted = x - x.max(axis=-1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logsumexp
    out_data = np.asarray(-logp[np.arange(n), labels].mean(), dtype=x.dtype)

    def rule(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        logits._accumulate((g * p / n).astype(x.dtype))

    return make_op(out_data, (logits,), rule)
