"""Reverse-mode autodiff over numpy arrays.

Graph nodes are created eagerly; ``Tensor.backward`` walks them in reverse
topological order.  Heavier ops (layer norm, softmax, attention, conv) are fused
with hand-written backward passes to keep Python overhead down.
"""
from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward", "op", "__weakref__")

    def __init__(self, data, requires_grad=False, _prev=(), op=""):
        if isinstance(data, np.ndarray):
            self.data = data
        elif isinstance(data, np.generic):  # 0-d arithmetic yields numpy scalars; keep their dtype
            self.data = np.asarray(data)
        else:
            self.data = np.asarray(data, dtype=np.float32)
        self.grad = None
        self.requires_grad = requires_grad
        self._prev = _prev
        self._backward = None
        self.op = op

    shape = property(lambda self: self.data.shape)
    ndim = property(lambda self: self.data.ndim)
    dtype = property(lambda self: self.data.dtype)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        _acc(self, grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._prev:
                    # intermediate grads are not needed once propagated
                    node.grad = None

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return add(self, neg(_t(o)))

    def __rsub__(self, o):
        return add(_t(o), neg(self))

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _acc(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _node(data, parents, op, backward) -> Tensor:
    rg = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, rg, tuple(parents) if rg else (), op)
    if rg:
        out._backward = backward
    return out


def parameter(data) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    try:
        data = a.data + b.data
    except ValueError as e:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from e

    def bw(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(g, b.shape))

    return _node(data, (a, b), "add", bw)


def neg(a) -> Tensor:
    a = _t(a)
    return _node(-a.data, (a,), "neg", lambda g: _acc(a, -g))


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    try:
        data = a.data * b.data
    except ValueError as e:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from e

    def bw(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(g * a.data, b.shape))

    return _node(data, (a, b), "mul", bw)


_KINKS = None  # list collecting relu masks while a gradient check records them


@contextmanager
def record_kinks():
    global _KINKS
    prev, _KINKS = _KINKS, []
    try:
        yield _KINKS
    finally:
        _KINKS = prev


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    if _KINKS is not None:
        _KINKS.append(mask)
    return _node(a.data * mask, (a,), "relu", lambda g: _acc(a, g * mask))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    x = a.data
    x2 = x * x
    inner = _GELU_C * x * (1.0 + 0.044715 * x2)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def bw(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        _acc(a, g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th ** 2) * d_inner))

    return _node(out, (a,), "gelu", bw)


def tanh(a: Tensor) -> Tensor:
    th = np.tanh(a.data)
    return _node(th, (a,), "tanh", lambda g: _acc(a, g * (1.0 - th ** 2)))


# ---------------------------------------------------------------- shape ops

def matmul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    data = a.data @ b.data

    def bw(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            if b.ndim == 2:
                k = a.shape[-1]
                _acc(b, a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1]))
            else:
                _acc(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _node(data, (a, b), "matmul", bw)


def reshape(a: Tensor, shape) -> Tensor:
    try:
        data = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from e
    return _node(data, (a,), "reshape", lambda g: _acc(a, g.reshape(a.shape)))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), (a,), "transpose", lambda g: _acc(a, g.transpose(inv)))


def getitem(a: Tensor, idx) -> Tensor:
    data = a.data[idx]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g) if _needs_add_at(idx) else full.__setitem__(idx, g)
        _acc(a, full)

    return _node(data, (a,), "getitem", bw)


def _needs_add_at(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors, axis=0) -> Tensor:
    tensors = [_t(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from e
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        for t, part in zip(tensors, np.split(g, sizes, axis=axis)):
            if t.requires_grad:
                _acc(t, part)

    return _node(data, tensors, "concat", bw)


def stack(tensors, axis=0) -> Tensor:
    tensors = [_t(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        for k, t in enumerate(tensors):
            if t.requires_grad:
                _acc(t, np.take(g, k, axis=axis))

    return _node(data, tensors, "stack", bw)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _acc(a, np.broadcast_to(g, a.shape))

    return _node(np.asarray(data), (a,), "sum", bw)


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * np.asarray(1.0 / n, dtype=a.dtype)


# ---------------------------------------------------------------- fused ops

def layer_norm(x: Tensor, w: Tensor, b: Tensor, eps: float = 1e-5) -> Tensor:
    if x.shape[-1] != w.shape[-1]:
        raise ShapeError(f"layer_norm: input {x.shape} vs weight {w.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * w.data + b.data

    def bw(g):
        if w.requires_grad:
            _acc(w, (g * xhat).reshape(-1, w.shape[-1]).sum(axis=0))
        if b.requires_grad:
            _acc(b, g.reshape(-1, b.shape[-1]).sum(axis=0))
        if x.requires_grad:
            gx = g * w.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            _acc(x, rstd * (gx - m1 - xhat * m2))

    return _node(out, (x, w, b), "layer_norm", bw)


def softmax_np(x: np.ndarray, axis=-1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x: Tensor, axis=-1) -> Tensor:
    p = softmax_np(x.data, axis)

    def bw(g):
        _acc(x, p * (g - (g * p).sum(axis=axis, keepdims=True)))

    return _node(p, (x,), "softmax", bw)


def attention(q: Tensor, k: Tensor, v: Tensor, store=None) -> Tensor:
    """Scaled dot-product attention over (..., T, d) inputs.

    ``store`` (a dict) receives the attention weights under ``"weights"``.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: q {q.shape}, k {k.shape}, v {v.shape} are incompatible")
    scale = np.asarray(1.0 / math.sqrt(q.shape[-1]), dtype=q.dtype)
    kt = np.swapaxes(k.data, -1, -2)
    A = softmax_np((q.data @ kt) * scale)
    if store is not None:
        store["weights"] = A
    out = A @ v.data

    def bw(g):
        if v.requires_grad:
            _acc(v, np.swapaxes(A, -1, -2) @ g)
        gA = g @ np.swapaxes(v.data, -1, -2)
        gS = A * (gA - (gA * A).sum(axis=-1, keepdims=True)) * scale
        if q.requires_grad:
            _acc(q, gS @ k.data)
        if k.requires_grad:
            _acc(k, np.swapaxes(gS, -1, -2) @ q.data)

    return _node(out, (q, k, v), "attention", bw)


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Channels-last 1D convolution: x (B, T, Cin), w (K, Cin, Cout) -> (B, T_out, Cout)."""
    B, T, Cin = x.shape
    K, Cw, Cout = w.shape
    if Cw != Cin:
        raise ShapeError(f"conv1d: input channels {x.shape} vs kernel {w.shape}")
    xp = np.pad(x.data, ((0, 0), (padding, padding), (0, 0))) if padding else x.data
    Tp = T + 2 * padding
    T_out = (Tp - K) // stride + 1
    if T_out <= 0:
        raise ShapeError(f"conv1d: kernel {K} too large for length {T} with padding {padding}")
    starts = np.arange(T_out) * stride
    cols = np.stack([xp[:, starts + k, :] for k in range(K)], axis=2)  # B, T_out, K, Cin
    cols2 = cols.reshape(B * T_out, K * Cin)
    out = (cols2 @ w.data.reshape(K * Cin, Cout)).reshape(B, T_out, Cout)
    if b is not None:
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        g2 = g.reshape(B * T_out, Cout)
        if w.requires_grad:
            _acc(w, (cols2.T @ g2).reshape(K, Cin, Cout))
        if b is not None and b.requires_grad:
            _acc(b, g2.sum(axis=0))
        if x.requires_grad:
            gc = (g2 @ w.data.reshape(K * Cin, Cout).T).reshape(B, T_out, K, Cin)
            gxp = np.zeros((B, Tp, Cin), dtype=x.dtype)
            for k in range(K):
                # indices within one tap are distinct, so fancy += is safe
                gxp[:, starts + k] += gc[:, :, k, :]
            _acc(x, gxp[:, padding:padding + T] if padding else gxp)

    return _node(out, parents, "conv1d", bw)


def wrapped_mse(pred: Tensor, target: np.ndarray, angle_index: int = 2) -> Tensor:
    """Mean squared error where the ``angle_index`` component uses the wrapped difference."""
    if pred.shape != target.shape:
        raise ShapeError(f"wrapped_mse: prediction {pred.shape} vs label {target.shape}")
    diff = pred.data - target
    ang = diff[..., angle_index]
    diff[..., angle_index] = np.mod(ang + np.pi, 2 * np.pi) - np.pi
    n = diff.size
    out = np.asarray((diff * diff).sum() / n, dtype=pred.dtype)

    def bw(g):
        _acc(pred, g * (2.0 / n) * diff)

    return _node(out, (pred,), "wrapped_mse", bw)
