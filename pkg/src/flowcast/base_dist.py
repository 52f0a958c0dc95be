"""Conditional diagonal Gaussian base distribution."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .nets import Mlp

SIGMA_FLOOR = 1e-6
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

@dataclass
class GaussianParams:
    """Per-row location and scale, each of shape (N, d)."""

    mu: Tensor
    sigma: Tensor

    def __post_init__(self):
        self.mu = ad.tensor(self.mu)
        self.sigma = ad.tensor(self.sigma)
        if self.mu.shape != self.sigma.shape:
            raise ShapeError(f"mu {self.mu.shape} and sigma {self.sigma.shape} differ")
        if np.any(~np.isfinite(self.mu.data)) or np.any(~np.isfinite(self.sigma.data)):
            raise ValueError("non-finite Gaussian parameters")
        if np.any(self.sigma.data <= 0):
            raise ValueError("sigma must be strictly positive")

    @property
    def dim(self) -> int:
        return self.mu.shape[-1]


def shape_params(phi_net: Mlp, x) -> GaussianParams:
    """Location and scale from the context network: first d outputs raw,
    last d through softplus plus a 1e-6 floor."""
    out = phi_net(x)
    if out.shape[1] % 2:
        raise ShapeError(f"base network must emit 2d outputs, got {out.shape[1]}")
    d = out.shape[1] // 2
    mu = out[:, :d]
    sigma = ad.softplus(out[:, d:]) + SIGMA_FLOOR
    return GaussianParams(mu, sigma)


def standard_params(n: int, d: int) -> GaussianParams:
    return GaussianParams(np.zeros((n, d)), np.ones((n, d)))


def log_prob(p: GaussianParams, z) -> Tensor:
    """Diagonal Gaussian log-density summed over the last axis; shape (N,)."""
    z = ad.tensor(z)
    if z.shape != p.mu.shape:
        raise ShapeError(f"log_prob: z {z.shape} does not match params {p.mu.shape}")
    u = (z - p.mu) / p.sigma
    per_dim = -LOG_SQRT_2PI - ad.log(p.sigma) - 0.5 * (u * u)
    return ad.sum(per_dim, axis=1)


def box_muller(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard normal draws from pairs of uniforms."""
    n = int(np.prod(shape))
    pairs = (n + 1) // 2
    u1 = 1.0 - rng.random(pairs)  # (0, 1]
    u2 = rng.random(pairs)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    draws = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])
    return draws[:n].reshape(shape)


def sample(p: GaussianParams, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` draws per row: array of shape (count, N, d)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    eps = box_muller(rng, (count, *p.mu.shape))
    return p.mu.data[None] + p.sigma.data[None] * eps


def norm_ppf(alpha) -> np.ndarray:
    """Standard normal quantile; levels must lie strictly inside (0, 1)."""
    a = np.asarray(alpha, dtype=float)
    if np.any(~((a > 0) & (a < 1))):
        raise ValueError("quantile level must lie strictly inside (0, 1)")
    return ndtri(a)


def norm_cdf(x) -> np.ndarray:
    return ndtr(np.asarray(x, dtype=float))


def quantile(p: GaussianParams, alpha: float) -> np.ndarray:
    """Per-dimension ``alpha`` quantile, shape (N, d)."""
    z = norm_ppf(alpha)
    return p.mu.data + p.sigma.data * z
