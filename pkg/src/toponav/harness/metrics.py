"""Success rate and success weighted by path length."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Metrics:
    SR: float
    SPL: float
    n: int
    per_category: dict = field(default_factory=dict)  # category -> (SR, SPL, n)

    def __post_init__(self):
        if not (0.0 <= self.SPL <= self.SR + 1e-12 <= 1.0 + 1e-12):
            raise ValueError(f"metric invariant violated: SPL={self.SPL} SR={self.SR}")


def _check(results):
    results = list(results)
    if not results:
        raise ValueError("no episode results")
    return results


def success_rate(results) -> float:
    results = _check(results)
    return sum(r.success for r in results) / len(results)


def spl(results) -> float:
    """Mean of success * shortest / max(path, shortest); start-at-goal successes count 1."""
    results = _check(results)
    return float(np.mean([r.spl_term() for r in results]))


def compute_metrics(results, categories=None) -> Metrics:
    results = _check(results)
    per = {}
    if categories is not None:
        categories = list(categories)
        for c in sorted(set(categories)):
            sub = [r for r, k in zip(results, categories) if k == c]
            per[c] = (success_rate(sub), spl(sub), len(sub))
    return Metrics(success_rate(results), spl(results), len(results), per)
