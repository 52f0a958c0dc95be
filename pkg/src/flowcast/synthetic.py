"""Synthetic datasets with known structure, used by smoke runs and tests."""
from __future__ import annotations

import numpy as np
from scipy.special import expit


def bimodal_centers(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float).reshape(len(x), -1)[:, 0]
    return 0.15 + 0.2 * x, 0.6 + 0.2 * x


def conditional_bimodal(n: int, rng: np.random.Generator, spread: float = 0.05):
    """Equal-weight two-component Gaussian mixture whose centers move with x.

    Returns ``(X, y)`` with X of shape (n, 1) uniform on [0, 1] and y of
    shape (n,).
    """
    x = rng.uniform(0.0, 1.0, size=(n, 1))
    c1, c2 = bimodal_centers(x)
    pick = rng.random(n) < 0.5
    y = np.where(pick, c1, c2) + spread * rng.standard_normal(n)
    return x, y


def bimodal_logpdf(x: np.ndarray, y: np.ndarray, spread: float = 0.05) -> np.ndarray:
    c1, c2 = bimodal_centers(x)
    y = np.asarray(y, dtype=float).reshape(-1)
    norm = -0.5 * np.log(2 * np.pi) - np.log(spread)
    a = norm - 0.5 * ((y - c1) / spread) ** 2
    b = norm - 0.5 * ((y - c2) / spread) ** 2
    return np.logaddexp(a, b) + np.log(0.5)


def ar1_power_series(
    n: int,
    rng: np.random.Generator,
    phi: float = 0.97,
    noise: float = 0.35,
    gain: float = 1.8,
) -> np.ndarray:
    """Bounded power-like series: AR(1) latent through a logistic power curve.

    The latent follows ``u_t = phi u_{t-1} + noise * e_t``; the output
    ``expit(gain * u_t)`` lies in (0, 1) with skewed conditionals near the
    bounds.
    """
    u = np.empty(n)
    u[0] = rng.standard_normal() * noise / np.sqrt(1 - phi**2)
    e = rng.standard_normal(n)
    for t in range(1, n):
        u[t] = phi * u[t - 1] + noise * e[t]
    return expit(gain * u)
