"""AdamW with cosine learning-rate decay, plus binary checkpoints."""
from __future__ import annotations

import json
import math
import struct

import numpy as np

CKPT_MAGIC = b"TNCK"
CKPT_VERSION = 1


class NonFiniteGradientError(FloatingPointError):
    pass


class CheckpointError(ValueError):
    pass


def cosine_lr(base_lr: float, step: int, total_steps: int, warmup: int = 0) -> float:
    if warmup and step < warmup:
        return base_lr * (step + 1) / warmup
    if total_steps <= 0:
        return base_lr
    frac = min(max(step - warmup, 0) / max(total_steps - warmup, 1), 1.0)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


class AdamW:
    """Decoupled weight decay Adam; ``step`` counts completed updates."""

    def __init__(self, params, lr=2e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01,
                 total_steps=0, warmup=0):
        self.params = list(params)
        self.lr, self.betas, self.eps, self.weight_decay = lr, tuple(betas), eps, weight_decay
        self.total_steps, self.warmup = total_steps, warmup
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def current_lr(self) -> float:
        return cosine_lr(self.lr, self.step_count, self.total_steps, self.warmup)

    def step(self):
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(f"non-finite gradient at optimizer step {self.step_count}")
        lr = self.current_lr()
        b1, b2 = self.betas
        t = self.step_count + 1
        c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            upd = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                upd = upd + self.weight_decay * p.data
            p.data -= (lr * upd).astype(p.data.dtype)
        self.step_count = t

    def zero_grad(self):
        for p in self.params:
            p.grad = None


# ---------------------------------------------------------------- checkpoints

def _pack_array(name: str, arr: np.ndarray) -> bytes:
    nb = name.encode()
    arr = np.ascontiguousarray(arr, dtype="<f4")
    head = struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


class _Reader:
    def __init__(self, buf):
        self.buf, self.off = buf, 0

    def take(self, n):
        if self.off + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint at offset {self.off}")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self):
        (n,) = self.unpack("<H")
        name = self.take(n).decode()
        (nd,) = self.unpack("<B")
        shape = self.unpack(f"<{nd}I") if nd else ()
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(self.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
        return name, data


def save_checkpoint(path, named_params, optimizer: AdamW | None = None, metadata: dict | None = None) -> bytes:
    """Write parameters (+ optimizer moments) and return the bytes written."""
    named = list(named_params)
    meta = json.dumps(metadata or {}, sort_keys=True).encode()
    out = [CKPT_MAGIC, struct.pack("<HI", CKPT_VERSION, len(meta)), meta, struct.pack("<I", len(named))]
    out += [_pack_array(n, p.data if hasattr(p, "data") else p) for n, p in named]
    if optimizer is None:
        out.append(struct.pack("<B", 0))
    else:
        o = optimizer
        out.append(struct.pack("<BQdddddQQ", 1, o.step_count, o.lr, o.betas[0], o.betas[1], o.eps,
                               o.weight_decay, o.total_steps, o.warmup))
        out += [_pack_array(f"m.{n}", m) for (n, _), m in zip(named, o.m)]
        out += [_pack_array(f"v.{n}", v) for (n, _), v in zip(named, o.v)]
    buf = b"".join(out)
    if path is not None:
        with open(path, "wb") as f:
            f.write(buf)
    return buf


def read_checkpoint(path_or_bytes):
    """Returns (metadata, {name: array}, optimizer_state or None)."""
    if isinstance(path_or_bytes, (bytes, bytearray)):
        buf = bytes(path_or_bytes)
    else:
        with open(path_or_bytes, "rb") as f:
            buf = f.read()
    r = _Reader(buf)
    if r.take(4) != CKPT_MAGIC:
        raise CheckpointError("bad checkpoint magic at offset 0")
    version, mlen = r.unpack("<HI")
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} at offset 4")
    meta = json.loads(r.take(mlen).decode())
    (n,) = r.unpack("<I")
    params = dict(r.array() for _ in range(n))
    (has_opt,) = r.unpack("<B")
    opt = None
    if has_opt:
        step, lr, b1, b2, eps, wd, total, warm = r.unpack("<QdddddQQ")
        m = [r.array()[1] for _ in range(n)]
        v = [r.array()[1] for _ in range(n)]
        opt = dict(step=step, lr=lr, betas=(b1, b2), eps=eps, weight_decay=wd, total_steps=total,
                   warmup=warm, m=m, v=v)
    return meta, params, opt


def load_into(module, params: dict, strict: bool = True):
    for name, p in module.named_parameters():
        if name not in params:
            if strict:
                raise CheckpointError(f"checkpoint lacks parameter {name}")
            continue
        if params[name].shape != p.data.shape:
            raise CheckpointError(f"shape mismatch for {name}: {params[name].shape} vs {p.data.shape}")
        p.data = params[name].astype(p.data.dtype).copy()


def restore_optimizer(opt: AdamW, state: dict):
    opt.step_count = state["step"]
    opt.lr, opt.betas, opt.eps = state["lr"], state["betas"], state["eps"]
    opt.weight_decay, opt.total_steps, opt.warmup = state["weight_decay"], state["total_steps"], state["warmup"]
    opt.m = [a.copy() for a in state["m"]]
    opt.v = [a.copy() for a in state["v"]]
