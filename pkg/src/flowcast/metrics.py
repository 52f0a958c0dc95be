"""Proper scores and calibration diagnostics.

Scores are per issue time; average them over the test set for reporting.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

RELIABILITY_LEVELS = np.round(np.arange(1, 20) * 0.05, 10)


@dataclass
class ReliabilityCurve:
    nominal: np.ndarray
    observed: np.ndarray

    def max_deviation(self) -> float:
        return float(np.max(np.abs(self.observed - self.nominal)))


def _as_obs(y_obs) -> float:
    y = np.asarray(y_obs, dtype=float)
    if y.size != 1:
        raise ValueError("CRPS is defined for a univariate observation")
    return float(y.reshape(-1)[0])


def crps_quadrature(density, y_obs: float, n_points: int = 2001, tail: float = 1e-7) -> float:
    """CRPS of a univariate forecast with ``cdf`` and ``ppf`` methods.

    Trapezoid rule on ``n_points`` spanning the central ``1 - 2*tail`` mass
    (extended to cover the observation), with the observation inserted as a
    node so the step is integrated exactly.
    """
    if getattr(density, "dim", 1) != 1 or getattr(getattr(density, "flow", None), "dim", 1) != 1:
        raise ValueError("crps_quadrature needs a univariate forecast")
    y = _as_obs(y_obs)
    lo, hi = (float(v) for v in np.ravel(density.ppf(np.array([tail, 1.0 - tail]))))
    lo, hi = min(lo, y), max(hi, y)
    if hi == lo:
        return 0.0
    grid = np.linspace(lo, hi, n_points)
    left = np.append(grid[grid < y], y)
    right = np.insert(grid[grid > y], 0, y)
    f_left = np.asarray(density.cdf(left), dtype=float)
    f_right = np.asarray(density.cdf(right), dtype=float)
    return float(np.trapezoid(f_left**2, left) + np.trapezoid((1.0 - f_right) ** 2, right))


def crps_from_quantiles(levels: Sequence[float], quantiles: np.ndarray, y_obs: np.ndarray) -> np.ndarray:
    """CRPS as twice the integrated pinball loss over a level grid (trapezoid).

    ``quantiles`` has shape (N, A); returns one score per row.
    """
    levels = np.asarray(levels, dtype=float)
    q = np.atleast_2d(np.asarray(quantiles, dtype=float))
    y = np.asarray(y_obs, dtype=float).reshape(-1, 1)
    if q.shape[1] != levels.size or q.shape[0] != y.shape[0]:
        raise ValueError(f"quantile array {q.shape} does not match {y.shape[0]} rows x {levels.size} levels")
    diff = y - q
    pinball = np.maximum(levels * diff, (levels - 1.0) * diff)
    if levels.size == 1:
        return 2.0 * pinball[:, 0]
    return 2.0 * np.trapezoid(pinball, levels, axis=1)


def energy_score(scenarios, y_obs) -> float:
    """Energy score of an (S, d) scenario set against a d-vector."""
    scen = np.asarray(scenarios, dtype=float)
    if scen.ndim == 1:
        scen = scen[:, None]
    y = np.atleast_1d(np.asarray(y_obs, dtype=float))
    if scen.shape[1] != y.size:
        raise ValueError(f"scenario dim {scen.shape[1]} != observation dim {y.size}")
    s = scen.shape[0]
    if s < 1:
        raise ValueError("need at least one scenario")
    to_obs = np.sqrt(((scen - y) ** 2).sum(axis=1)).sum() / s
    pair = np.sqrt(((scen[:, None, :] - scen[None, :, :]) ** 2).sum(axis=2)).sum()
    return float(to_obs - pair / (2.0 * s * s))


def crps_samples(draws, y_obs: float) -> float:
    """Ensemble CRPS; identical to the energy score of the draws at d = 1."""
    draws = np.asarray(draws, dtype=float).reshape(-1)
    if draws.size < 2:
        raise ValueError("crps_samples needs at least two draws")
    return energy_score(draws[:, None], np.array([_as_obs(y_obs)]))


def crps_ecdf(sorted_values: np.ndarray, y_obs: np.ndarray) -> np.ndarray:
    """Exact CRPS of an empirical distribution for many observations, O(n) each."""
    x = np.asarray(sorted_values, dtype=float)
    n = x.size
    ranks = 2.0 * np.arange(1, n + 1) - n - 1
    spread = 2.0 * float(np.dot(ranks, x)) / (n * n)
    y = np.atleast_1d(np.asarray(y_obs, dtype=float))
    to_obs = np.array([np.abs(x - v).mean() for v in y])
    return to_obs - 0.5 * spread


def variogram_score(scenarios, y_obs, p: float = 0.5) -> float:
    """Unweighted variogram score of order ``p`` over all ordered pairs."""
    scen = np.asarray(scenarios, dtype=float)
    if scen.ndim == 1:
        scen = scen[None, :]
    y = np.atleast_1d(np.asarray(y_obs, dtype=float))
    if scen.shape[1] != y.size:
        raise ValueError(f"scenario dim {scen.shape[1]} != observation dim {y.size}")
    obs_vario = np.abs(y[:, None] - y[None, :]) ** p
    scen_vario = (np.abs(scen[:, :, None] - scen[:, None, :]) ** p).mean(axis=0)
    return float(((obs_vario - scen_vario) ** 2).sum())


def reliability(quantiles, observations, levels: Sequence[float] = RELIABILITY_LEVELS) -> ReliabilityCurve:
    """Observed frequency of ``y_t <= q_t(alpha)`` for each nominal level."""
    q = np.atleast_2d(np.asarray(quantiles, dtype=float))
    y = np.asarray(observations, dtype=float).reshape(-1)
    levels = np.asarray(levels, dtype=float)
    if q.shape != (y.size, levels.size):
        raise ValueError(f"quantiles {q.shape} do not align with {y.size} observations x {levels.size} levels")
    observed = (y[:, None] <= q).mean(axis=0)
    return ReliabilityCurve(levels.copy(), observed)


def pi_width(lower, upper) -> float:
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if lower.shape != upper.shape:
        raise ValueError("lower and upper bounds differ in length")
    if np.any(upper < lower):
        raise ValueError("prediction interval bounds cross")
    return float(np.mean(upper - lower))


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("FLOWCAST_THREADS", "1")))
    except ValueError:
        return 1


def map_rows(fn: Callable[[int], float], n: int) -> np.ndarray:
    """Evaluate ``fn`` over row indices, threaded up to FLOWCAST_THREADS."""
    workers = min(worker_count(), max(n, 1))
    if workers == 1:
        return np.array([fn(i) for i in range(n)], dtype=float)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return np.array(list(pool.map(fn, range(n))), dtype=float)


def mean_energy_score(scenarios: np.ndarray, observations: np.ndarray) -> float:
    """Average ES for scenarios of shape (N, S, d) and observations (N, d)."""
    obs = np.asarray(observations, dtype=float).reshape(len(scenarios), -1)
    return float(map_rows(lambda i: energy_score(scenarios[i], obs[i]), len(obs)).mean())


def mean_variogram_score(scenarios: np.ndarray, observations: np.ndarray, p: float = 0.5) -> float:
    obs = np.asarray(observations, dtype=float).reshape(len(scenarios), -1)
    return float(map_rows(lambda i: variogram_score(scenarios[i], obs[i], p), len(obs)).mean())
