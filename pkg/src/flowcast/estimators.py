"""scikit-learn compatible forecasters.

``FlowForecaster`` covers the spline flow and its affine (Gaussian) and
affine+sigmoid (logit-normal) special cases; ``ClimatologyForecaster`` and
``MuPEnForecaster`` are the naive references.  All expose ``fit``,
``predict``, ``predict_quantiles``, ``predict_interval`` and ``sample``.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import autodiff as ad
from . import metrics
from .baselines import EmpiricalDist, climatology_quantile, mupen_sample
from .flow import ConditionalFlow, make_affine_flow, make_logit_flow, make_spline_flow
from .nets import read_container, write_container
from .training import FitResult, TrainConfig, fit

FLOW_KINDS = ("cnf", "nn_g", "nn_l")


def _check_targets(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return y[:, None] if y.ndim == 1 else y


def _check_levels(alphas) -> np.ndarray:
    a = np.atleast_1d(np.asarray(alphas, dtype=float))
    if np.any((a <= 0) | (a >= 1)):
        raise ValueError("quantile levels must lie strictly inside (0, 1)")
    return a


def _interval_levels(beta: float) -> tuple[float, float]:
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie strictly inside (0, 1)")
    return beta / 2.0, 1.0 - beta / 2.0


class _ForecasterMixin:
    def predict_interval(self, X, beta: float = 0.1) -> np.ndarray:
        """Central (1 - beta) interval; columns are (lower, upper)."""
        return self.predict_quantiles(X, _interval_levels(beta))

    def predict(self, X) -> np.ndarray:
        """Predictive median (univariate) as a 1-D array."""
        return self.predict_quantiles(X, [0.5])[:, 0]


class FlowForecaster(_ForecasterMixin, BaseEstimator):
    """Conditional normalizing flow forecaster.

    Parameters
    ----------
    kind : {"cnf", "nn_g", "nn_l"}
        Rational-quadratic spline flow, affine flow (Gaussian) or affine flow
        followed by a sigmoid (logit-normal).
    support : (low, high) or None
        Target range mapped linearly into the spline interval (``cnf``).
    logit_eps : float
        ``nn_l`` targets are clipped to [eps, 1 - eps].
    validation_fraction : float
        Trailing share of the training rows held out for model selection
        when no explicit validation set is passed to ``fit``.
    """

    def __init__(
        self,
        kind: str = "cnf",
        n_transforms: int = 5,
        n_knots: int = 10,
        bound: float = 5.0,
        base_hidden=(512, 512),
        cond_hidden=(256, 256),
        base: str = "conditional",
        permute: bool = True,
        support=(0.0, 1.0),
        lr: float = 1e-4,
        lr_decay: float = 1.0 / 3.0,
        decay_every: int = 300,
        max_iter: int = 3000,
        batch_size: int = 256,
        eval_every: int = 50,
        patience: int = 10,
        clip_norm: float | None = 10.0,
        validation_fraction: float = 0.125,
        logit_eps: float = 1e-4,
        random_state: int = 0,
    ):
        self.kind = kind
        self.n_transforms = n_transforms
        self.n_knots = n_knots
        self.bound = bound
        self.base_hidden = base_hidden
        self.cond_hidden = cond_hidden
        self.base = base
        self.permute = permute
        self.support = support
        self.lr = lr
        self.lr_decay = lr_decay
        self.decay_every = decay_every
        self.max_iter = max_iter
        self.batch_size = batch_size
        self.eval_every = eval_every
        self.patience = patience
        self.clip_norm = clip_norm
        self.validation_fraction = validation_fraction
        self.logit_eps = logit_eps
        self.random_state = random_state

    # ------------------------------------------------------------------ build
    def _build(self, dim: int, context_dim: int) -> ConditionalFlow:
        common = dict(
            n_transforms=self.n_transforms,
            base_hidden=tuple(self.base_hidden),
            cond_hidden=tuple(self.cond_hidden),
            base=self.base,
            permute=self.permute,
            rng=self.random_state,
        )
        if self.kind == "cnf":
            support = None if self.support is None else tuple(self.support)
            return make_spline_flow(
                dim, context_dim, n_bins=self.n_knots, bound=self.bound, support=support, **common
            )
        if self.kind == "nn_g":
            return make_affine_flow(dim, context_dim, **common)
        if self.kind == "nn_l":
            return make_logit_flow(dim, context_dim, **common)
        raise ValueError(f"kind must be one of {FLOW_KINDS}, got {self.kind!r}")

    def _prepare_targets(self, y: np.ndarray) -> np.ndarray:
        if self.kind == "nn_l":
            return np.clip(y, self.logit_eps, 1.0 - self.logit_eps)
        return y

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr0=self.lr,
            decay=self.lr_decay,
            decay_every=self.decay_every,
            max_iters=self.max_iter,
            batch_size=self.batch_size,
            seed=self.random_state,
            eval_every=self.eval_every,
            patience=self.patience,
            clip_norm=self.clip_norm,
        )

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True, dtype=np.float64)
        y = _check_targets(y)
        if X_val is None:
            n_val = max(1, int(round(self.validation_fraction * len(X))))
            if n_val >= len(X):
                raise ValueError("not enough rows to hold out a validation set")
            X, X_val = X[:-n_val], X[-n_val:]
            y, y_val = y[:-n_val], y[-n_val:]
        else:
            X_val, y_val = check_X_y(X_val, y_val, multi_output=True, y_numeric=True, dtype=np.float64)
            y_val = _check_targets(y_val)
        self.n_features_in_ = X.shape[1]
        self.n_outputs_ = y.shape[1]
        self.flow_ = self._build(self.n_outputs_, self.n_features_in_)
        self.fit_result_: FitResult = fit(
            self.flow_,
            self._prepare_targets(y),
            X,
            self._prepare_targets(y_val),
            X_val,
            self.train_config(),
        )
        self.history_ = self.fit_result_.history
        return self

    @classmethod
    def from_flow(cls, flow: ConditionalFlow, **params) -> "FlowForecaster":
        est = cls(**params)
        est.flow_ = flow
        est.n_features_in_ = flow.context_dim
        est.n_outputs_ = flow.dim
        est.history_ = []
        return est

    # ------------------------------------------------------------- inference
    def _X(self, X) -> np.ndarray:
        check_is_fitted(self, "flow_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def log_prob(self, X, y) -> np.ndarray:
        X = self._X(X)
        y = self._prepare_targets(_check_targets(y))
        with ad.no_grad():
            return self.flow_.log_prob(y, X).data

    def score(self, X, y) -> float:
        """Mean log-likelihood (higher is better)."""
        return float(np.mean(self.log_prob(X, y)))

    def predict_quantiles(self, X, alphas) -> np.ndarray:
        X = self._X(X)
        return self.flow_.quantiles(X, _check_levels(alphas))

    def sample(self, X, n_scenarios: int = 100, random_state=None) -> np.ndarray:
        """Scenarios of shape (N, n_scenarios, d)."""
        X = self._X(X)
        rng = np.random.default_rng(self.random_state if random_state is None else random_state)
        return self.flow_.sample(X, n_scenarios, rng)

    def density(self, x_row):
        x = self._X(np.atleast_2d(x_row))[0]
        return self.flow_.density(x)

    def crps(self, X, y, n_points: int = 2001) -> np.ndarray:
        """Per-row CRPS by quadrature of the exact predictive CDF."""
        X = self._X(X)
        y = _check_targets(y)[:, 0]
        return metrics.map_rows(
            lambda i: metrics.crps_quadrature(self.flow_.density(X[i]), y[i], n_points), len(y)
        )


class ClimatologyForecaster(_ForecasterMixin, BaseEstimator):
    """Unconditional empirical distribution of the training targets."""

    def __init__(self, random_state: int = 0):
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True, dtype=np.float64)
        y = _check_targets(y)
        if y.shape[1] != 1:
            raise ValueError("climatology is a univariate forecast")
        self.n_features_in_ = X.shape[1]
        self.n_outputs_ = 1
        self.dist_ = EmpiricalDist(y[:, 0])
        return self

    def _n(self, X) -> int:
        check_is_fitted(self, "dist_")
        return check_array(X, dtype=np.float64).shape[0]

    def predict_quantiles(self, X, alphas) -> np.ndarray:
        n = self._n(X)
        row = np.array([climatology_quantile(self.dist_, a) for a in _check_levels(alphas)])
        return np.tile(row, (n, 1))

    def sample(self, X, n_scenarios: int = 100, random_state=None) -> np.ndarray:
        n = self._n(X)
        rng = np.random.default_rng(self.random_state if random_state is None else random_state)
        return rng.choice(self.dist_.values, size=(n, n_scenarios, 1), replace=True)

    def crps(self, X, y) -> np.ndarray:
        self._n(X)
        return metrics.crps_ecdf(self.dist_.values, _check_targets(y)[:, 0])


class MuPEnForecaster(BaseEstimator):
    """Scenarios drawn without replacement from historical joint outcomes."""

    def __init__(self, random_state: int = 0):
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True, dtype=np.float64)
        self.n_features_in_ = X.shape[1]
        self.history_ = _check_targets(y).copy()
        self.n_outputs_ = self.history_.shape[1]
        return self

    def sample(self, X, n_scenarios: int = 100, random_state=None) -> np.ndarray:
        check_is_fitted(self, "history_")
        n = check_array(X, dtype=np.float64).shape[0]
        rng = np.random.default_rng(self.random_state if random_state is None else random_state)
        return np.stack([mupen_sample(self.history_, n_scenarios, rng) for _ in range(n)])

    def predict_quantiles(self, X, alphas) -> np.ndarray:
        if self.n_outputs_ != 1:
            raise ValueError("quantiles are only defined for univariate forecasts")
        n = check_array(X, dtype=np.float64).shape[0]
        q = np.quantile(self.history_[:, 0], _check_levels(alphas))
        return np.tile(q, (n, 1))


# ---------------------------------------------------------------- checkpoints


def save_model(model, path, extra_header: dict | None = None) -> None:
    """Write any fitted forecaster to the binary checkpoint container."""
    path = Path(path)
    extra = dict(extra_header or {})
    with path.open("wb") as fh:
        if isinstance(model, FlowForecaster):
            check_is_fitted(model, "flow_")
            params = model.get_params()
            params["base_hidden"] = list(params["base_hidden"])
            params["cond_hidden"] = list(params["cond_hidden"])
            params["support"] = None if params["support"] is None else list(params["support"])
            model.flow_.save(fh, {"model": model.kind, "estimator": params, **extra})
        elif isinstance(model, ClimatologyForecaster):
            header = {"model": "climatology", "n_features_in": model.n_features_in_, **extra}
            write_container(fh, {"history": model.dist_.values[:, None]}, header)
        elif isinstance(model, MuPEnForecaster):
            header = {"model": "mupen", "n_features_in": model.n_features_in_, **extra}
            write_container(fh, {"history": model.history_}, header)
        else:
            raise TypeError(f"cannot checkpoint {type(model).__name__}")


def load_model(path):
    """Inverse of :func:`save_model`; returns ``(model, header)``."""
    path = Path(path)
    with path.open("rb") as fh:
        header, tensors = read_container(fh)
    kind = header.get("model")
    if kind in FLOW_KINDS:
        with path.open("rb") as fh:
            flow, header = ConditionalFlow.load(fh)
        params = dict(header["estimator"])
        params["base_hidden"] = tuple(params["base_hidden"])
        params["cond_hidden"] = tuple(params["cond_hidden"])
        if params.get("support") is not None:
            params["support"] = tuple(params["support"])
        return FlowForecaster.from_flow(flow, **params), header
    history = tensors["history"]
    if kind == "climatology":
        model = ClimatologyForecaster()
        model.dist_ = EmpiricalDist(history[:, 0])
        model.n_outputs_ = 1
    elif kind == "mupen":
        model = MuPEnForecaster()
        model.history_ = history
        model.n_outputs_ = history.shape[1]
    else:
        raise ValueError(f"unknown model kind in checkpoint: {kind!r}")
    model.n_features_in_ = header["n_features_in"]
    return model, header
