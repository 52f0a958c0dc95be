"""Flat ``key = value`` run configuration with ``#`` comments."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .data import SupervisedSet, frame_from_arrays, load_csv, make_case
from .estimators import ClimatologyForecaster, FlowForecaster, MuPEnForecaster
from .synthetic import ar1_power_series, conditional_bimodal

MODEL_KINDS = ("cnf", "nn_g", "nn_l", "climatology", "mupen")


class ConfigError(ValueError):
    pass


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _optional_int(text: str) -> int | None:
    return None if text.strip().lower() in ("", "none", "auto") else int(text)


def _optional_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none") else float(text)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    data: str = "synthetic:bimodal"
    case: int = 2
    model: str = "cnf"
    output_dir: str = "runs/default"
    n_transforms: int = 5
    base_hidden: tuple[int, ...] = (512, 512)
    cond_hidden: tuple[int, ...] = (256, 256)
    knots: int = 10
    bound: float = 5.0
    base: str = "conditional"
    permute: bool = True
    support: tuple[float, ...] = (0.0, 1.0)
    lr0: float = 1e-4
    decay: float = 1.0 / 3.0
    decay_every: int = 300
    max_iters: int = 3000
    batch_size: int = 256
    eval_every: int = 50
    patience: int = 10
    clip_norm: float | None = 10.0
    scenarios: int = 100
    seed: int = 0
    lag: int = 6
    horizon: int | None = None
    site: int = 0
    capacity: float = 1.0
    synthetic_rows: int = 20000
    eval_rows: int = 0

    def validate(self) -> "RunConfig":
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        if self.case not in (1, 2, 3, 4):
            raise ConfigError(f"case must be 1-4, got {self.case}")
        if self.base not in ("conditional", "standard"):
            raise ConfigError("base must be 'conditional' or 'standard'")
        if len(self.support) != 2 or not self.support[1] > self.support[0]:
            raise ConfigError("support must be 'low,high' with high > low")
        positive = ("n_transforms", "knots", "max_iters", "batch_size", "eval_every", "scenarios", "lag")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.lr0 > 0 or not self.bound > 0 or not self.capacity > 0:
            raise ConfigError("lr0, bound and capacity must be positive")
        if self.patience < 0:
            raise ConfigError("patience must be >= 0")
        return self

    def snapshot(self) -> str:
        lines = ["# resolved flowcast run configuration"]
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                text = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
            elif value is None:
                text = "none"
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            lines.append(f"{f.name} = {text}")
        return "\n".join(lines) + "\n"


_PARSERS = {
    "data": str,
    "case": int,
    "model": str,
    "output_dir": str,
    "n_transforms": int,
    "base_hidden": _ints,
    "cond_hidden": _ints,
    "knots": int,
    "bound": float,
    "base": str,
    "permute": _bool,
    "support": _floats,
    "lr0": float,
    "decay": float,
    "decay_every": int,
    "max_iters": int,
    "batch_size": int,
    "eval_every": int,
    "patience": int,
    "clip_norm": _optional_float,
    "scenarios": int,
    "seed": int,
    "lag": int,
    "horizon": _optional_int,
    "site": int,
    "capacity": float,
    "synthetic_rows": int,
    "eval_rows": int,
}


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _PARSERS[key](raw)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    return dataclasses.replace(base or RunConfig(), **values).validate()


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"))


def override(cfg: RunConfig, **changes) -> RunConfig:
    return dataclasses.replace(cfg, **changes).validate()


def load_dataset(cfg: RunConfig) -> SupervisedSet:
    """Materialize the supervised rows named by ``cfg.data``.

    ``synthetic:bimodal`` gives the 1-D conditional mixture task,
    ``synthetic:ar1`` a bounded AR(1)-driven series cut per ``case``; any
    other value is a CSV path.
    """
    if cfg.data == "synthetic:bimodal":
        rng = np.random.default_rng(cfg.seed)
        X, y = conditional_bimodal(cfg.synthetic_rows, rng)
        times = np.asarray([str(i) for i in range(len(y))], dtype=object)
        return SupervisedSet(X=X, Y=y[:, None], case=2, issue_times=times, target_times=times[:, None])
    if cfg.data == "synthetic:ar1":
        rng = np.random.default_rng(cfg.seed)
        if cfg.case == 4:
            sites = np.stack([ar1_power_series(cfg.synthetic_rows, rng) for _ in range(5)], axis=1)
            frame = frame_from_arrays(sites)
        else:
            frame = frame_from_arrays(ar1_power_series(cfg.synthetic_rows, rng))
        return make_case(frame, cfg.case, cfg.lag, cfg.horizon, cfg.site)
    frame = load_csv(cfg.data, capacity=cfg.capacity)
    return make_case(frame, cfg.case, cfg.lag, cfg.horizon, cfg.site)


def build_model(cfg: RunConfig):
    if cfg.model == "climatology":
        return ClimatologyForecaster(random_state=cfg.seed)
    if cfg.model == "mupen":
        return MuPEnForecaster(random_state=cfg.seed)
    return FlowForecaster(
        kind=cfg.model,
        n_transforms=cfg.n_transforms,
        n_knots=cfg.knots,
        bound=cfg.bound,
        base_hidden=cfg.base_hidden,
        cond_hidden=cfg.cond_hidden,
        base=cfg.base,
        permute=cfg.permute,
        support=cfg.support,
        lr=cfg.lr0,
        lr_decay=cfg.decay,
        decay_every=cfg.decay_every,
        max_iter=cfg.max_iters,
        batch_size=cfg.batch_size,
        eval_every=cfg.eval_every,
        patience=cfg.patience,
        clip_norm=cfg.clip_norm,
        random_state=cfg.seed,
    )
