"""Central finite-difference gradient checks."""
from __future__ import annotations

import numpy as np

from .tensor import record_kinks


def _val(v) -> float:
    return float(getattr(v, "data", v))


def numeric_grad(fn, arr: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """d fn() / d arr by central differences, perturbing ``arr`` in place."""
    g = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = _val(fn())
        flat[i] = old - h
        fm = _val(fn())
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def _eval(loss_fn):
    with record_kinks() as masks:
        val = float(loss_fn().data)
    return val, masks


def _same(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def gradcheck(loss_fn, tensors, h: float = 1e-3, max_entries: int | None = None, rng=None,
              stats: dict | None = None, floor: float = 1e-8) -> float:
    """Max over tensors of max|analytic - numeric| / max(|analytic|, |numeric|, floor).

    The floor keeps round-off on exactly-zero gradients (e.g. a bias feeding
    a layer norm) from reading as a 100% error when only such entries are probed.

    ``loss_fn`` builds a fresh scalar Tensor from the current tensor values.
    Use float64 tensors; float32 round-off swamps the differences.  With
    ``max_entries`` only a random subset of entries per tensor is probed.
    Probes whose +-h perturbation flips a relu mask straddle a kink, where
    central differences are meaningless; they are skipped and counted in
    ``stats["skipped"]`` (``stats["probed"]`` counts all probes).
    """
    for t in tensors:
        t.grad = None
    with record_kinks() as base:
        loss = loss_fn()
    loss.backward()
    worst = 0.0
    probed = skipped = 0
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
        num = np.empty(idx.size)
        keep = np.ones(idx.size, bool)
        for n, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            fp, kp = _eval(loss_fn)
            flat[i] = old - h
            fm, km = _eval(loss_fn)
            flat[i] = old
            num[n] = (fp - fm) / (2 * h)
            keep[n] = _same(kp, base) and _same(km, base)
        probed += idx.size
        skipped += int((~keep).sum())
        a = analytic.reshape(-1)[idx][keep]
        num = num[keep]
        scale = max(np.abs(a).max(initial=0.0), np.abs(num).max(initial=0.0))
        if a.size == 0:
            continue
        worst = max(worst, float(np.abs(a - num).max() / max(scale, floor)))
    if stats is not None:
        stats["probed"] = stats.get("probed", 0) + probed
        stats["skipped"] = stats.get("skipped", 0) + skipped
    return worst
