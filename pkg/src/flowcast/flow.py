"""Conditional normalizing flows built from autoregressive transforms.

The chain runs ``z0 -> T_1 -> ... -> T_K -> [sigmoid] -> [target map] -> y``.
Each ``T_k`` applies an elementwise transformer whose parameters come from an
additive conditioner over the already-produced coordinates of its output and
the context, followed by a fixed permutation (except after the last one).

Densities use the inverse direction, where every conditioner input is known
and a single pass suffices.  Sampling uses the forward direction and fills
coordinates one at a time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import BinaryIO, Sequence

import numpy as np

from . import autodiff as ad
from . import base_dist, rq_spline
from .autodiff import ShapeError, Tensor
from .nets import AdditiveConditioner, MaskedMlp, Mlp, Permutation, read_container, write_container

AFFINE_FLOOR = 1e-6
TRANSFORMER_KINDS = ("spline", "affine")


def _as_2d(a, name: str) -> np.ndarray:
    arr = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


@dataclass
class Transform:
    conditioner: AdditiveConditioner
    kind: str = "spline"
    n_bins: int = 10
    bound: float = 5.0
    permutation: Permutation | None = None

    def __post_init__(self):
        if self.kind not in TRANSFORMER_KINDS:
            raise ValueError(f"unknown transformer kind {self.kind!r}")

    @property
    def dim(self) -> int:
        return self.conditioner.d

    def _apply(self, v: Tensor, raw: Tensor, inverse: bool) -> tuple[Tensor, Tensor]:
        if self.kind == "spline":
            params = rq_spline.normalize_params(raw, self.n_bins, self.bound)
            return (rq_spline.inverse if inverse else rq_spline.forward)(v, params)
        n, d = v.shape
        shift = ad.reshape(raw[..., 0], (n, d))
        scale = ad.softplus(ad.reshape(raw[..., 1], (n, d))) + AFFINE_FLOOR
        if inverse:
            return (v - shift) / scale, -ad.log(scale)
        return scale * v + shift, ad.log(scale)

    def inverse(self, out, x) -> tuple[Tensor, Tensor]:
        """Map this transform's output back to its input; log-det per row."""
        out = ad.tensor(out)
        u = self.permutation.invert(out) if self.permutation else out
        raw = self.conditioner(u, x)
        z, logdet = self._apply(u, raw, inverse=True)
        return z, ad.sum(logdet, axis=1)

    def forward(self, z: np.ndarray, x) -> tuple[np.ndarray, np.ndarray]:
        """Sequential generation; returns output and forward log-det per row."""
        z = np.asarray(z, dtype=float)
        n, d = z.shape
        with ad.no_grad():
            ctx = self.conditioner.context_part(x)
            u = np.zeros_like(z)
            for i in range(d):
                raw = self.conditioner.combine(self.conditioner.made_part(u), ctx)
                col, _ = self._apply(Tensor(z[:, i : i + 1]), raw[:, i : i + 1, :], inverse=False)
                u[:, i] = col.data[:, 0]
            raw = self.conditioner.combine(self.conditioner.made_part(u), ctx)
            _, logdet = self._apply(Tensor(z), raw, inverse=False)
        out = self.permutation.apply(u) if self.permutation else u
        return out, logdet.data.sum(axis=1)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return self.conditioner.parameters(prefix)


@dataclass
class FlowConfig:
    """Everything needed to rebuild a flow's architecture."""

    dim: int
    context_dim: int
    kind: str = "spline"  # spline | affine
    n_transforms: int = 5
    n_bins: int = 10
    bound: float = 5.0
    base_hidden: tuple[int, ...] = (512, 512)
    cond_hidden: tuple[int, ...] = (256, 256)
    base: str = "conditional"  # conditional | standard
    permute: bool = True
    output_sigmoid: bool = False
    target_scale: float = 1.0
    target_shift: float = 0.0
    zero_init: bool = True

    def to_header(self) -> dict:
        out = dict(self.__dict__)
        out["base_hidden"] = list(self.base_hidden)
        out["cond_hidden"] = list(self.cond_hidden)
        return out

    @classmethod
    def from_header(cls, header: dict) -> "FlowConfig":
        h = dict(header)
        h["base_hidden"] = tuple(h["base_hidden"])
        h["cond_hidden"] = tuple(h["cond_hidden"])
        return cls(**h)


class ConditionalFlow:
    def __init__(self, config: FlowConfig, rng: np.random.Generator | int | None = 0):
        if config.n_transforms < 1:
            raise ValueError("a flow needs at least one transform")
        rng = np.random.default_rng(rng)
        self.config = config
        d, c = config.dim, config.context_dim
        self.base_net = (
            Mlp(c, config.base_hidden, 2 * d, rng) if config.base == "conditional" else None
        )
        per_dim = rq_spline.n_raw(config.n_bins) if config.kind == "spline" else 2
        self.transforms: list[Transform] = []
        for k in range(config.n_transforms):
            made = MaskedMlp(d, config.cond_hidden, per_dim, rng, zero_last=config.zero_init)
            ctx = Mlp(c, config.cond_hidden, d * per_dim, rng, zero_last=config.zero_init)
            last = k == config.n_transforms - 1
            perm = Permutation.reverse(d) if config.permute and not last and d > 1 else None
            self.transforms.append(
                Transform(AdditiveConditioner(made, ctx), config.kind, config.n_bins, config.bound, perm)
            )

    # ------------------------------------------------------------ properties
    @property
    def dim(self) -> int:
        return self.config.dim

    @property
    def context_dim(self) -> int:
        return self.config.context_dim

    def parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        if self.base_net is not None:
            params.update(self.base_net.parameters("base."))
        for k, t in enumerate(self.transforms):
            params.update(t.parameters(f"t{k}."))
        return params

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    # ------------------------------------------------------------ base
    def base_params(self, x) -> base_dist.GaussianParams:
        x = ad.tensor(_as_2d(x, "context"))
        if x.shape[1] != self.context_dim:
            raise ShapeError(f"context width {x.shape[1]} != {self.context_dim}")
        if self.base_net is None:
            return base_dist.standard_params(x.shape[0], self.dim)
        return base_dist.shape_params(self.base_net, x)

    # ------------------------------------------------------------ passes
    def _check(self, y: np.ndarray, x: np.ndarray) -> None:
        if y.shape[1] != self.dim:
            raise ShapeError(f"target width {y.shape[1]} != flow dim {self.dim}")
        if x.shape[1] != self.context_dim:
            raise ShapeError(f"context width {x.shape[1]} != {self.context_dim}")
        if y.shape[0] != x.shape[0]:
            raise ShapeError(f"row counts differ: {y.shape[0]} targets vs {x.shape[0]} contexts")

    def inverse_pass(self, y, x) -> tuple[Tensor, Tensor]:
        """``(z0, log|det dz0/dy|)`` per row."""
        y = _as_2d(y, "targets")
        x = _as_2d(x, "context")
        self._check(y, x)
        cfg = self.config
        v = Tensor(y)
        logdet = Tensor(np.full(y.shape[0], self.dim * math.log(cfg.target_scale)))
        if cfg.target_scale != 1.0 or cfg.target_shift != 0.0:
            v = v * cfg.target_scale + cfg.target_shift
        if cfg.output_sigmoid:
            if np.any((v.data <= 0) | (v.data >= 1)):
                raise ValueError("logit-normal flow needs targets strictly inside (0, 1)")
            log_v, log_1mv = ad.log(v), ad.log(1.0 - v)
            logdet = logdet - ad.sum(log_v + log_1mv, axis=1)
            v = log_v - log_1mv
        xt = Tensor(x)
        for t in reversed(self.transforms):
            v, ld = t.inverse(v, xt)
            logdet = logdet + ld
        return v, logdet

    def forward_pass(self, z0, x) -> tuple[np.ndarray, np.ndarray]:
        """``(y, log|det dy/dz0|)`` per row."""
        z = _as_2d(z0, "base draws").copy()
        x = _as_2d(x, "context")
        self._check(z, x)
        cfg = self.config
        xt = Tensor(x)
        logdet = np.zeros(z.shape[0])
        for t in self.transforms:
            z, ld = t.forward(z, xt)
            logdet += ld
        if cfg.output_sigmoid:
            s = 1.0 / (1.0 + np.exp(-z))
            # log s + log(1 - s), computed stably
            logdet += np.sum(-np.logaddexp(0.0, -z) - np.logaddexp(0.0, z), axis=1)
            z = s
        if cfg.target_scale != 1.0 or cfg.target_shift != 0.0:
            z = (z - cfg.target_shift) / cfg.target_scale
        logdet -= self.dim * math.log(cfg.target_scale)
        return z, logdet

    def log_prob(self, y, x) -> Tensor:
        z0, logdet = self.inverse_pass(y, x)
        return base_dist.log_prob(self.base_params(x), z0) + logdet

    def nll(self, y, x) -> Tensor:
        """Mean negative log-likelihood over rows (differentiable scalar)."""
        y = _as_2d(y, "targets")
        if y.shape[0] == 0:
            raise ValueError("nll of an empty batch")
        lp = self.log_prob(y, x)
        return ad.sum(lp) * (-1.0 / y.shape[0])

    # ------------------------------------------------------------ prediction
    def sample(self, x, count: int, rng: np.random.Generator) -> np.ndarray:
        """Scenarios of shape (N, count, d)."""
        if count < 1:
            raise ValueError("scenario count must be >= 1")
        x = _as_2d(x, "context")
        with ad.no_grad():
            p = self.base_params(x)
        z0 = base_dist.sample(p, count, rng)  # (S, N, d)
        n = x.shape[0]
        flat_x = np.broadcast_to(x[None], (count, *x.shape)).reshape(count * n, -1)
        y, _ = self.forward_pass(z0.reshape(count * n, self.dim), flat_x)
        return y.reshape(count, n, self.dim).transpose(1, 0, 2)

    def quantiles(self, x, alphas: Sequence[float]) -> np.ndarray:
        """Quantiles of the univariate predictive law, shape (N, len(alphas))."""
        if self.dim != 1:
            raise ValueError("quantiles are only defined for univariate flows (d = 1)")
        alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
        x = _as_2d(x, "context")
        with ad.no_grad():
            p = self.base_params(x)
        zq = p.mu.data + p.sigma.data * base_dist.norm_ppf(alphas)[None, :]  # (N, A)
        flat_x = np.repeat(x, len(alphas), axis=0)
        y, _ = self.forward_pass(zq.reshape(-1, 1), flat_x)
        return y.reshape(x.shape[0], len(alphas))

    def cdf(self, y, x) -> np.ndarray:
        """Predictive CDF for univariate flows (exploits monotonicity)."""
        if self.dim != 1:
            raise ValueError("the CDF is only defined here for univariate flows")
        with ad.no_grad():
            z0, _ = self.inverse_pass(y, x)
            p = self.base_params(x)
        return base_dist.norm_cdf((z0.data - p.mu.data) / p.sigma.data)[:, 0]

    def density(self, x_row) -> "ForecastDensity":
        return ForecastDensity(self, np.asarray(x_row, dtype=float).reshape(-1))

    # ------------------------------------------------------------ persistence
    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"missing tensors: {sorted(missing)[:5]}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise ShapeError(f"{k}: stored {state[k].shape} vs model {p.shape}")
            p.data[...] = state[k]

    def save(self, fh: BinaryIO, extra_header: dict | None = None) -> None:
        header = {"flow": self.config.to_header(), **(extra_header or {})}
        write_container(fh, self.state_dict(), header)

    @classmethod
    def load(cls, fh: BinaryIO) -> tuple["ConditionalFlow", dict]:
        header, tensors = read_container(fh)
        flow = cls(FlowConfig.from_header(header["flow"]), rng=0)
        flow.load_state_dict(tensors)
        return flow, header


@dataclass
class ForecastDensity:
    """Predictive law of a univariate flow at one frozen context row."""

    flow: ConditionalFlow
    x: np.ndarray = field(repr=False)

    def _ctx(self, n: int) -> np.ndarray:
        return np.broadcast_to(self.x[None], (n, self.x.size))

    def log_density(self, y) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        with ad.no_grad():
            return self.flow.log_prob(y[:, None], self._ctx(y.size)).data

    def pdf(self, y) -> np.ndarray:
        return np.exp(self.log_density(y))

    def cdf(self, y) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return self.flow.cdf(y[:, None], self._ctx(y.size))

    def ppf(self, alpha) -> np.ndarray:
        return self.flow.quantiles(self.x[None], np.atleast_1d(alpha))[0]

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        return self.flow.sample(self.x[None], count, rng)[0, :, 0]


# ------------------------------------------------------------------ factories


def support_map(low: float, high: float, bound: float, margin: float = 0.5) -> tuple[float, float]:
    """Scale/shift taking [low, high] onto [-bound + margin, bound - margin]."""
    if not high > low:
        raise ValueError("support must satisfy high > low")
    scale = (2 * bound - 2 * margin) / (high - low)
    shift = -bound + margin - low * scale
    return scale, shift


def make_spline_flow(
    dim: int,
    context_dim: int,
    *,
    n_transforms: int = 5,
    n_bins: int = 10,
    bound: float = 5.0,
    base_hidden: Sequence[int] = (512, 512),
    cond_hidden: Sequence[int] = (256, 256),
    base: str = "conditional",
    permute: bool = True,
    support: tuple[float, float] | None = None,
    rng=0,
) -> ConditionalFlow:
    scale, shift = support_map(*support, bound) if support is not None else (1.0, 0.0)
    cfg = FlowConfig(
        dim, context_dim, "spline", n_transforms, n_bins, bound, tuple(base_hidden),
        tuple(cond_hidden), base, permute, False, scale, shift,
    )
    return ConditionalFlow(cfg, rng)


def make_affine_flow(
    dim: int,
    context_dim: int,
    *,
    n_transforms: int = 5,
    base_hidden: Sequence[int] = (512, 512),
    cond_hidden: Sequence[int] = (256, 256),
    base: str = "conditional",
    permute: bool = True,
    rng=0,
) -> ConditionalFlow:
    """Gaussian model (NN-G): affine transformers only."""
    cfg = FlowConfig(
        dim, context_dim, "affine", n_transforms, 0, 0.0, tuple(base_hidden),
        tuple(cond_hidden), base, permute,
    )
    return ConditionalFlow(cfg, rng)


def make_logit_flow(
    dim: int,
    context_dim: int,
    *,
    n_transforms: int = 5,
    base_hidden: Sequence[int] = (512, 512),
    cond_hidden: Sequence[int] = (256, 256),
    base: str = "conditional",
    permute: bool = True,
    rng=0,
) -> ConditionalFlow:
    """Logit-normal model (NN-L): affine transformers then a sigmoid."""
    cfg = FlowConfig(
        dim, context_dim, "affine", n_transforms, 0, 0.0, tuple(base_hidden),
        tuple(cond_hidden), base, permute, True,
    )
    return ConditionalFlow(cfg, rng)
