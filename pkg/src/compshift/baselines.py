"""Comparison methods: a frozen offline MLP and per-sample online gradient descent."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .neural import MlpConfig, MlpParams, TrainRecipe, _backward_cache, _forward_cache, train_supervised

OFFLINE = "Offline"
OGD = "OGD"


@dataclass(frozen=True)
class BaselineConfig:
    kind: str = OFFLINE
    ogd_lr: float = 1e-3
    hidden_dim: int = 128
    recipe: TrainRecipe = TrainRecipe()

    def __post_init__(self):
        if self.kind not in (OFFLINE, OGD):
            raise ValueError(f"unknown baseline kind {self.kind!r}")
        # 0 is allowed so OGD can degenerate to Offline
        if self.ogd_lr < 0:
            raise ValueError("ogd_lr must be non-negative")


@dataclass
class StreamResult:
    cumulative_loss: float
    losses: np.ndarray
    predictions: np.ndarray
    params: MlpParams


def fit_offline(train: Dataset, rng: np.random.Generator, config: BaselineConfig = BaselineConfig()) -> MlpParams:
    if len(train) == 0:
        raise ValueError("empty training set")
    mlp = MlpConfig(train.d, config.hidden_dim, 1)
    return train_supervised(train.x, train.y, mlp, config.recipe, rng).params


def stream_sgd(params: MlpParams, x, y, lr: float) -> StreamResult:
    """Prequential pass: predict x_t, suffer (y_hat - y_t)^2, then one plain SGD step.

    ``params`` is not modified; a copy is updated. With lr = 0 the model is
    never touched.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    params = params.copy()
    arrays = params.arrays()
    T = len(y)
    preds, losses = np.empty(T), np.empty(T)
    for t in range(T):
        out, cache = _forward_cache(params, x[t:t + 1])
        preds[t] = out[0, 0]
        r = preds[t] - y[t]
        losses[t] = r * r
        if lr:
            grads = _backward_cache(params, cache, np.array([[2.0 * r]])).arrays()
            for p, g in zip(arrays, grads):
                p -= lr * g
    return StreamResult(float(losses.sum()), losses, preds, params)


def offline_run(train: Dataset, test: Dataset, rng: np.random.Generator,
                config: BaselineConfig = BaselineConfig()) -> StreamResult:
    """Train once with the standard recipe and predict the whole stream frozen."""
    return stream_sgd(fit_offline(train, rng, config), test.x, test.y, 0.0)


def ogd_run(train: Dataset, test: Dataset, config: BaselineConfig = BaselineConfig(kind=OGD),
            rng: np.random.Generator | None = None) -> StreamResult:
    """Same initial fit as Offline, then one SGD step per stream sample (no weight decay)."""
    if rng is None:
        raise ValueError("ogd_run needs an explicit rng")
    return stream_sgd(fit_offline(train, rng, config), test.x, test.y, config.ogd_lr)
