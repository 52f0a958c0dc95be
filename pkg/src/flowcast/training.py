"""Maximum-likelihood training: Adam, step-decay schedule, minibatching and
validation-based snapshot selection."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, TextIO

import numpy as np

from .autodiff import Tensor, no_grad

logger = logging.getLogger(__name__)


class NumericalError(ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, iteration: int, batch_index: int, value: float):
        super().__init__(f"non-finite loss {value} at iteration {iteration} (batch {batch_index})")
        self.iteration = iteration
        self.batch_index = batch_index


@dataclass
class TrainConfig:
    lr0: float = 1e-4
    decay: float = 1.0 / 3.0
    decay_every: int = 300
    max_iters: int = 3000
    batch_size: int = 256
    seed: int = 0
    eval_every: int = 50
    patience: int = 10
    clip_norm: float | None = 10.0

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.eval_every < 1 or self.decay_every < 1:
            raise ValueError("eval_every and decay_every must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")


def lr_at(iteration: int, lr0: float = 1e-4, decay: float = 1.0 / 3.0, every: int = 300) -> float:
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    return lr0 * decay ** (iteration // every)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray | None],
    state: AdamState,
    lr: float,
) -> None:
    """Bias-corrected Adam update applied in place to ``params``."""
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        factor = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= factor
    return total


@dataclass
class HistoryRow:
    iteration: int
    train_nll: float
    val_nll: float
    lr: float


@dataclass
class FitResult:
    history: list[HistoryRow]
    best_iteration: int
    best_val_nll: float
    final_val_nll: float
    stopped_early: bool


def _eval_nll(flow, y: np.ndarray, x: np.ndarray, chunk: int = 4096) -> float:
    total = 0.0
    with no_grad():
        for start in range(0, len(y), chunk):
            lp = flow.log_prob(y[start : start + chunk], x[start : start + chunk])
            total -= float(lp.data.sum())
    return total / len(y)


def fit(
    flow,
    y_train: np.ndarray,
    x_train: np.ndarray,
    y_val: np.ndarray,
    x_val: np.ndarray,
    cfg: TrainConfig | None = None,
) -> FitResult:
    """Train ``flow`` in place; on return it holds the best-validation weights."""
    cfg = cfg or TrainConfig()
    y_train, x_train = np.asarray(y_train, float), np.asarray(x_train, float)
    y_val, x_val = np.asarray(y_val, float), np.asarray(x_val, float)
    if len(y_train) == 0 or len(y_val) == 0:
        raise ValueError("training and validation sets must be non-empty")
    if y_train.ndim == 1:
        y_train, y_val = y_train[:, None], y_val[:, None]
    rng = np.random.default_rng(cfg.seed)
    params = flow.parameters()
    state = AdamState()
    n = len(y_train)
    batch = min(cfg.batch_size, n)
    order = rng.permutation(n)
    cursor = 0

    history: list[HistoryRow] = []
    best_val = math.inf
    best_state = flow.state_dict()
    best_iter = -1
    since_best = 0
    val_nll = math.nan
    stopped_early = False
    running = []

    for it in range(cfg.max_iters):
        if cursor + batch > n:
            order = rng.permutation(n)
            cursor = 0
        idx = order[cursor : cursor + batch]
        batch_index = cursor // batch
        cursor += batch

        flow.zero_grad()
        loss = flow.nll(y_train[idx], x_train[idx])
        value = loss.item()
        if not math.isfinite(value):
            raise NumericalError(it, batch_index, value)
        loss.backward()
        grads = {k: p.grad for k, p in params.items() if p.grad is not None}
        if cfg.clip_norm is not None:
            clip_global_norm(grads, cfg.clip_norm)
        lr = lr_at(it, cfg.lr0, cfg.decay, cfg.decay_every)
        adam_step(params, grads, state, lr)
        running.append(value)

        if (it + 1) % cfg.eval_every == 0 or it + 1 == cfg.max_iters:
            val_nll = _eval_nll(flow, y_val, x_val)
            history.append(HistoryRow(it + 1, float(np.mean(running)), val_nll, lr))
            running = []
            logger.debug("iter %d train %.4f val %.4f", it + 1, history[-1].train_nll, val_nll)
            if val_nll < best_val:
                best_val, best_iter, since_best = val_nll, it + 1, 0
                best_state = flow.state_dict()
            else:
                since_best += 1
            if since_best >= cfg.patience and it + 1 < cfg.max_iters:
                stopped_early = True
                break

    final_val = val_nll
    flow.load_state_dict(best_state)
    return FitResult(history, best_iter, best_val, final_val, stopped_early)


def write_history(rows: list[HistoryRow], fh: TextIO) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["iter", "train_nll", "val_nll", "lr"])
    for r in rows:
        writer.writerow([r.iteration, repr(r.train_nll), repr(r.val_nll), repr(r.lr)])
