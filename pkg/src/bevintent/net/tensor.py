"""A small reverse-mode autodiff engine over dense numpy arrays.

Image tensors are channels-last, (N, H, W, C). Every op records its parents and
a closure that pushes the output gradient back to them; ``backward`` walks the
graph in reverse topological order. Reduction order is fixed, so repeated runs
give bitwise-identical gradients.
"""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "parents", "_backward", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, parents: Sequence["Tensor"] = (),
                 backward: Optional[Callable] = None, name: Optional[str] = None):
        self.data = np.asarray(data)
        self.grad = None
        self.parents = tuple(parents)
        self._backward = backward
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.asarray(grad, dtype=self.data.dtype)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _result(data, parents, backward) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, parents=parents if needs else (),
                  backward=backward if needs else None)


def parameter(data, name: Optional[str] = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def fused(value, inputs: Sequence[tuple]) -> Tensor:
    """Node whose local gradients are known at forward time.

    ``inputs`` is a list of (tensor, d value / d tensor) pairs; ``value`` must be a
    scalar so the chain rule is a plain scaling.
    """
    parents = tuple(t for t, _ in inputs)
    grads = [g for _, g in inputs]

    def backward(g):
        for t, local in zip(parents, grads):
            _accumulate(t, local * g)

    return _result(np.asarray(value), parents, backward)


# ---------------------------------------------------------------- elementwise

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.data.dtype)

    def backward(g):
        _accumulate(x, g * mask)

    return _result(out, (x,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _result(a.data + b.data, (a, b), backward)


def scale(x: Tensor, c: float) -> Tensor:
    def backward(g):
        _accumulate(x, g * c)

    return _result(x.data * c, (x,), backward)


def add_n(terms: Sequence[Tensor]) -> Tensor:
    terms = list(terms)
    out = terms[0].data.copy()
    for t in terms[1:]:
        out = out + t.data

    def backward(g):
        for t in terms:
            _accumulate(t, g)

    return _result(out, tuple(terms), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, sizes, axis=axis)):
            _accumulate(t, piece)

    return _result(out, tuple(tensors), backward)


def reshape(x: Tensor, shape) -> Tensor:
    def backward(g):
        _accumulate(x, g.reshape(x.shape))

    return _result(x.data.reshape(shape), (x,), backward)


def take_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Rows ``idx`` of ``x`` viewed as (-1, last_dim)."""
    D = x.shape[-1]
    flat = x.data.reshape(-1, D)
    idx = np.asarray(idx, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(flat)
        np.add.at(full, idx, g)
        _accumulate(x, full.reshape(x.shape))

    return _result(flat[idx], (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        _accumulate(x, s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return _result(s, (x,), backward)


def total(x: Tensor) -> Tensor:
    def backward(g):
        _accumulate(x, np.broadcast_to(g, x.shape))

    return _result(x.data.sum(), (x,), backward)


# --------------------------------------------------------------------- conv

def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """Cross-correlation. x: (N, H, W, C); w: (k, k, C, O); b: (O,)."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weights, got {x.shape} and {w.shape}")
    N, H, W, C = x.shape
    kh, kw, Cw, O = w.shape
    if Cw != C:
        raise ShapeError(f"conv2d: input has {C} channels but weights expect {Cw} "
                         f"(input {x.shape}, weights {w.shape})")
    if b is not None and b.shape != (O,):
        raise ShapeError(f"conv2d: bias shape {b.shape} does not match {O} output channels")
    Ho = conv_output_size(H, kh, stride, padding)
    Wo = conv_output_size(W, kw, stride, padding)
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d: input {H}x{W} too small for kernel {kh}x{kw}")
    p = padding
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p), (0, 0))) if p else x.data
    cols = np.empty((N, Ho, Wo, kh, kw, C), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride, :]
    cols = cols.reshape(N * Ho * Wo, kh * kw * C)
    wmat = w.data.reshape(kh * kw * C, O)
    out = cols @ wmat
    if b is not None:
        out += b.data
    out = out.reshape(N, Ho, Wo, O)

    def backward(g):
        g2 = g.reshape(N * Ho * Wo, O)
        if w.requires_grad:
            _accumulate(w, (cols.T @ g2).reshape(w.shape))
        if b is not None and b.requires_grad:
            _accumulate(b, g2.sum(0))
        if x.requires_grad:
            dcols = (g2 @ wmat.T).reshape(N, Ho, Wo, kh, kw, C)
            dxp = np.zeros((N, H + 2 * p, W + 2 * p, C), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride, :] += dcols[:, :, :, i, j, :]
            _accumulate(x, dxp[:, p:p + H, p:p + W, :] if p else dxp)

    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, backward)


__all__ = [
    "ShapeError", "Tensor", "parameter", "fused", "relu", "add", "scale", "add_n", "concat",
    "reshape", "take_rows", "softmax", "total", "conv_output_size", "conv2d",
]
