"""Naive reference forecasts: climatology and MuPEn."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EmpiricalDist:
    values: np.ndarray

    def __post_init__(self):
        v = np.sort(np.asarray(self.values, dtype=float).reshape(-1))
        if v.size == 0:
            raise ValueError("empirical distribution needs at least one value")
        object.__setattr__(self, "values", v)

    def cdf(self, y) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return np.searchsorted(self.values, y, side="right") / self.values.size

    def ppf(self, alpha) -> np.ndarray:
        return np.array([climatology_quantile(self, a) for a in np.atleast_1d(alpha)])


def climatology_quantile(dist: EmpiricalDist, alpha: float) -> float:
    """Linearly interpolated empirical quantile, h = (n - 1) * alpha."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie strictly inside (0, 1)")
    v = dist.values
    h = (v.size - 1) * alpha
    lo = math.floor(h)
    if lo + 1 >= v.size:
        return float(v[-1])
    return float(v[lo] + (h - lo) * (v[lo + 1] - v[lo]))


def mupen_sample(history: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` distinct historical rows drawn uniformly without replacement."""
    history = np.asarray(history, dtype=float)
    if history.ndim == 1:
        history = history[:, None]
    if count > len(history):
        raise ValueError(f"cannot draw {count} scenarios from {len(history)} historical rows")
    if count < 1:
        raise ValueError("count must be >= 1")
    return history[rng.choice(len(history), size=count, replace=False)]
