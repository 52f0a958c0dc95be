"""Monotone rational-quadratic spline transformer with identity tails.

All batch functions operate elementwise on tensors of shape (..., d) with
spline parameters of shape (..., d, M+1) and are differentiable with respect
to both the input and the raw parameters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

MIN_BIN = 1e-3
MIN_DERIV = 1e-3


class SplineDomainError(ArithmeticError):
    """Negative discriminant while inverting: the parameters are invalid."""


@dataclass
class SplineParams:
    knots_x: Tensor
    knots_y: Tensor
    derivs: Tensor
    bound: float

    @property
    def n_bins(self) -> int:
        return self.knots_x.shape[-1] - 1


def n_raw(n_bins: int) -> int:
    return 3 * n_bins - 1


def _edge(shape, value: float) -> np.ndarray:
    return np.full((*shape, 1), value)


def _knots(raw: Tensor, n_bins: int, bound: float, min_bin: float) -> Tensor:
    lead = raw.shape[:-1]
    sizes = min_bin + (2 * bound - n_bins * min_bin) * ad.softmax(raw, axis=-1)
    inner = ad.cumsum(sizes, axis=-1)[..., : n_bins - 1] - bound
    return ad.concat([_edge(lead, -bound), inner, _edge(lead, bound)], axis=-1)


def normalize_params(
    raw,
    n_bins: int,
    bound: float = 5.0,
    min_bin: float = MIN_BIN,
    min_deriv: float = MIN_DERIV,
) -> SplineParams:
    """Map unconstrained conditioner outputs to a valid spline.

    ``raw[..., :M]`` are bin widths, ``raw[..., M:2M]`` bin heights and
    ``raw[..., 2M:]`` the M-1 internal derivatives.  All-zero raw values give
    the identity on [-bound, bound].
    """
    raw = ad.tensor(raw)
    if raw.shape[-1] != n_raw(n_bins):
        raise ShapeError(f"expected {n_raw(n_bins)} raw spline values for M={n_bins}, got {raw.shape[-1]}")
    if n_bins * min_bin >= 2 * bound:
        raise ValueError(f"{n_bins} bins with minimum size {min_bin} do not fit in [-{bound}, {bound}]")
    m = n_bins
    lead = raw.shape[:-1]
    knots_x = _knots(raw[..., :m], m, bound, min_bin)
    knots_y = _knots(raw[..., m : 2 * m], m, bound, min_bin)
    shift = math.log(math.expm1(1.0 - min_deriv))
    inner = ad.softplus(raw[..., 2 * m :] + shift) + min_deriv
    derivs = ad.concat([_edge(lead, 1.0), inner, _edge(lead, 1.0)], axis=-1)
    return SplineParams(knots_x, knots_y, derivs, float(bound))


def _pick(t: Tensor, idx: np.ndarray) -> Tensor:
    return ad.reshape(ad.gather(t, idx[..., None], axis=-1), idx.shape)


def _bin_index(knots: np.ndarray, v: np.ndarray) -> np.ndarray:
    interior = knots[..., 1:-1]
    return np.sum(interior <= v[..., None], axis=-1)


def _bin_terms(p: SplineParams, idx: np.ndarray):
    xk, xk1 = _pick(p.knots_x, idx), _pick(p.knots_x, idx + 1)
    yk, yk1 = _pick(p.knots_y, idx), _pick(p.knots_y, idx + 1)
    dk, dk1 = _pick(p.derivs, idx), _pick(p.derivs, idx + 1)
    width = xk1 - xk
    height = yk1 - yk
    slope = height / width
    return xk, yk, dk, dk1, width, height, slope


def _log_deriv(xi: Tensor, slope: Tensor, dk: Tensor, dk1: Tensor) -> Tensor:
    one_minus = 1.0 - xi
    mixed = xi * one_minus
    numer = dk1 * (xi * xi) + 2.0 * slope * mixed + dk * (one_minus * one_minus)
    denom = slope + (dk1 + dk - 2.0 * slope) * mixed
    return 2.0 * ad.log(slope) + ad.log(numer) - 2.0 * ad.log(denom)


def _check_shapes(v: Tensor, p: SplineParams) -> None:
    if p.knots_x.shape[:-1] != v.shape:
        raise ShapeError(f"input shape {v.shape} does not match spline batch {p.knots_x.shape[:-1]}")
    if np.any(np.isnan(v.data)):
        raise ValueError("NaN input to spline")


def forward(z, p: SplineParams) -> tuple[Tensor, Tensor]:
    """Spline value and log|dy/dz| elementwise."""
    z = ad.tensor(z)
    _check_shapes(z, p)
    inside = (z.data >= -p.bound) & (z.data <= p.bound)
    z_in = ad.where(inside, z, 0.0)
    idx = _bin_index(p.knots_x.data, z_in.data)
    xk, yk, dk, dk1, width, height, slope = _bin_terms(p, idx)
    xi = (z_in - xk) / width
    mixed = xi * (1.0 - xi)
    numer = height * (slope * (xi * xi) + dk * mixed)
    denom = slope + (dk1 + dk - 2.0 * slope) * mixed
    y_in = yk + numer / denom
    logd = _log_deriv(xi, slope, dk, dk1)
    return ad.where(inside, y_in, z), ad.where(inside, logd, 0.0)


def inverse(y, p: SplineParams) -> tuple[Tensor, Tensor]:
    """Inverse spline and log|dz/dy| elementwise (quadratic-root solution)."""
    y = ad.tensor(y)
    _check_shapes(y, p)
    inside = (y.data >= -p.bound) & (y.data <= p.bound)
    y_in = ad.where(inside, y, 0.0)
    idx = _bin_index(p.knots_y.data, y_in.data)
    xk, yk, dk, dk1, width, height, slope = _bin_terms(p, idx)
    offset = y_in - yk
    curv = dk1 + dk - 2.0 * slope
    a = height * (slope - dk) + offset * curv
    b = height * dk - offset * curv
    c = -slope * offset
    disc = b * b - 4.0 * a * c
    scale = b.data * b.data + np.abs(4.0 * a.data * c.data)
    bad = inside & (disc.data < -1e-12 * scale)
    if np.any(bad):
        raise SplineDomainError(f"negative discriminant in {int(bad.sum())} spline inversions")
    disc = ad.where(disc.data < 0, 0.0, disc)
    xi = (2.0 * c) / (-b - ad.sqrt(disc))
    z_in = xk + xi * width
    logd = _log_deriv(xi, slope, dk, dk1)
    return ad.where(inside, z_in, y), ad.where(inside, -logd, 0.0)


# ------------------------------------------------------------ scalar helpers


def _single(p: SplineParams) -> SplineParams:
    if p.knots_x.ndim != 1:
        return p
    return SplineParams(
        ad.reshape(p.knots_x, (1, -1)),
        ad.reshape(p.knots_y, (1, -1)),
        ad.reshape(p.derivs, (1, -1)),
        p.bound,
    )


def spline_forward(z: float, p: SplineParams) -> tuple[float, float]:
    """Scalar forward map for a single spline (knots of shape (M+1,))."""
    if math.isnan(z):
        raise ValueError("NaN input to spline")
    with ad.no_grad():
        y, ld = forward(np.array([z]), _single(p))
    return float(y.data[0]), float(ld.data[0])


def spline_inverse(y: float, p: SplineParams) -> tuple[float, float]:
    if math.isnan(y):
        raise ValueError("NaN input to spline")
    with ad.no_grad():
        z, ld = inverse(np.array([y]), _single(p))
    return float(z.data[0]), float(ld.data[0])
