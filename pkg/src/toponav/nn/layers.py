"""Module containers and the layers the policy is built from."""
from __future__ import annotations

import math

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    attention,
    concat,
    conv1d,
    gelu,
    layer_norm,
    parameter,
    relu,
)


class Module:
    """Parameters are discovered from attributes, in assignment order."""

    def named_parameters(self, prefix=""):
        for name, val in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(val, Tensor):
                if val.requires_grad:
                    yield full, val
            elif isinstance(val, Module):
                yield from val.named_parameters(full + ".")
            elif isinstance(val, (list, tuple)):
                for k, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{k}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype):
        """Cast every array attribute (trainable or frozen) in place."""
        for name, val in vars(self).items():
            if isinstance(val, Tensor):
                val.data = val.data.astype(dtype)
            elif isinstance(val, np.ndarray) and val.dtype.kind == "f":
                setattr(self, name, val.astype(dtype))
            elif isinstance(val, Module):
                val.astype(dtype)
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        item.astype(dtype)
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _init(rng, shape, fan_in):
    return parameter((rng.standard_normal(shape) / math.sqrt(fan_in)).astype(np.float32))


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True, init_scale=1.0):
        self.w = parameter((rng.standard_normal((d_in, d_out)) * init_scale / math.sqrt(d_in)).astype(np.float32))
        self.b = parameter(np.zeros(d_out, np.float32)) if bias else None

    def forward(self, x):
        y = x @ self.w
        return y + self.b if self.b is not None else y


class LayerNorm(Module):
    def __init__(self, d, eps=1e-5):
        self.w = parameter(np.ones(d, np.float32))
        self.b = parameter(np.zeros(d, np.float32))
        self.eps = eps

    def forward(self, x):
        return layer_norm(x, self.w, self.b, self.eps)


class MultiHeadAttention(Module):
    """Multi-head attention with separate query and key/value inputs.

    After each call ``last_weights`` holds the (B, heads, Tq, Tk) attention maps.
    """

    def __init__(self, d, heads, rng):
        if d % heads:
            raise ShapeError(f"model dim {d} is not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(d, d, rng)
        self.kv = Linear(d, 2 * d, rng)
        self.o = Linear(d, d, rng)
        self._store = {}

    @property
    def last_weights(self):
        return self._store.get("weights")

    def forward(self, x, ctx=None):
        ctx = x if ctx is None else ctx
        B, Tq, d = x.shape
        Tk = ctx.shape[1]
        h, dh = self.heads, d // self.heads
        q = self.q(x).reshape(B, Tq, h, dh).transpose(0, 2, 1, 3)
        kv = self.kv(ctx).reshape(B, Tk, 2, h, dh).transpose(2, 0, 3, 1, 4)
        out = attention(q, kv[0], kv[1], self._store)
        return self.o(out.transpose(0, 2, 1, 3).reshape(B, Tq, d))


class FeedForward(Module):
    def __init__(self, d, hidden, rng):
        self.fc1 = Linear(d, hidden, rng)
        self.fc2 = Linear(hidden, d, rng)

    def forward(self, x):
        return self.fc2(gelu(self.fc1(x)))


class EncoderLayer(Module):
    """Pre-norm transformer encoder layer (non-causal self-attention)."""

    def __init__(self, d, heads, rng, ff_mult=2):
        self.ln1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng)
        self.ln2 = LayerNorm(d)
        self.ff = FeedForward(d, ff_mult * d, rng)

    def forward(self, x):
        x = x + self.attn(self.ln1(x))
        return x + self.ff(self.ln2(x))


class CrossLayer(Module):
    """Self-attention over the query tokens, then cross-attention to a context sequence."""

    def __init__(self, d, heads, rng, ff_mult=2):
        self.ln1 = LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, heads, rng)
        self.ln2 = LayerNorm(d)
        self.ln_ctx = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, heads, rng)
        self.ln3 = LayerNorm(d)
        self.ff = FeedForward(d, ff_mult * d, rng)

    def forward(self, x, ctx):
        x = x + self.self_attn(self.ln1(x))
        x = x + self.cross_attn(self.ln2(x), self.ln_ctx(ctx))
        return x + self.ff(self.ln3(x))


class Conv1d(Module):
    def __init__(self, c_in, c_out, kernel, rng, stride=1, padding=0):
        self.w = _init(rng, (kernel, c_in, c_out), kernel * c_in)
        self.b = parameter(np.zeros(c_out, np.float32))
        self.stride, self.padding = stride, padding

    def forward(self, x):
        return conv1d(x, self.w, self.b, self.stride, self.padding)


class MLP(Module):
    def __init__(self, sizes, rng):
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]

    def forward(self, x):
        for k, layer in enumerate(self.layers):
            x = layer(x)
            if k < len(self.layers) - 1:
                x = relu(x)
        return x


def sinusoidal_positions(n, d) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d // 2)[None, :]
    ang = pos / (10000.0 ** (2 * i / d))
    pe = np.zeros((n, d))
    pe[:, 0::2] = np.sin(ang)
    pe[:, 1::2] = np.cos(ang)
    return pe.astype(np.float32)


__all__ = [
    "Module", "Linear", "LayerNorm", "MultiHeadAttention", "FeedForward", "EncoderLayer",
    "CrossLayer", "Conv1d", "MLP", "sinusoidal_positions", "concat",
]
