"""Online adaptation of the mixing weight u_t with a two-layer optimistic scheme.

M optimistic online-gradient-descent learners with learning rates
eta * 2^(i-1) each propose a weight vector; an optimistic hedge meta-learner
combines them. All learners see the same gradient, evaluated at the combined
point u_t, of the squared loss of the ensemble prediction.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mixture import MixtureModel
from .numeric import stable_softmax

U_LIMIT = 1e12


class AdaptationError(RuntimeError):
    pass


@dataclass(frozen=True)
class AdaptConfig:
    M: int = 11
    base_lr: float = 0.01
    meta_lr: float = 1.0
    correction: float = 0.1

    def __post_init__(self):
        # M = 1 is accepted: the meta layer then degenerates to the identity
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if min(self.base_lr, self.meta_lr, self.correction) <= 0:
            raise ValueError("learning rates and correction must be positive")

    @property
    def learning_rates(self) -> np.ndarray:
        return self.base_lr * 2.0 ** np.arange(self.M)


@dataclass
class AdaptState:
    """Rows of ``u``/``u_hint``/``u_prev`` belong to the M base learners."""

    u: np.ndarray          # (M, K) u_{ti}
    u_hint: np.ndarray     # (M, K) u'_{ti}
    u_prev: np.ndarray     # (M, K) u_{(t-1)i}; unused in round 1
    p: np.ndarray          # (M,) meta distribution p_t
    cum_loss: np.ndarray   # (M,) sum_{s<t} of surrogate losses
    lr: np.ndarray         # (M,)
    t: int = 1

    @classmethod
    def initial(cls, K: int, config: AdaptConfig) -> "AdaptState":
        M = config.M
        return cls(np.zeros((M, K)), np.zeros((M, K)), np.zeros((M, K)),
                   np.full(M, 1.0 / M), np.zeros(M), config.learning_rates)

    def combined(self) -> np.ndarray:
        return self.p @ self.u

    def copy(self) -> "AdaptState":
        return AdaptState(self.u.copy(), self.u_hint.copy(), self.u_prev.copy(), self.p.copy(),
                          self.cum_loss.copy(), self.lr.copy(), self.t)


def ensemble_gradient_parts(heads: np.ndarray, log_dens: np.ndarray, u: np.ndarray, y: float):
    """Prediction and d/du of (softmax(u + v)^T h - y)^2 from precomputed h(x), v(x)."""
    g = stable_softmax(u + log_dens)
    y_hat = float(g @ heads)
    grad = 2.0 * g * (heads - y_hat) * (y_hat - y)
    return y_hat, grad


def ensemble_gradient(model: MixtureModel, u, x, y) -> np.ndarray:
    """Closed-form gradient of the squared ensemble loss w.r.t. u.

    With a = softmax(u), b = softmax(v(x)) and y_hat = a.(h*b)/(a.b):
        2 (a*b)/(a.b) * (h - y_hat) * (y_hat - y)
    (a*b)/(a.b) is softmax(u + v(x)), which is how it is evaluated.
    """
    return ensemble_gradient_parts(model.heads(x), model.log_density(x), np.asarray(u, float), float(y))[1]


def base_update(state: AdaptState, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Optimistic OGD for all learners: the gradient is applied once to the
    hint and once more as the optimistic step. Returns (u'_{t+1}, u_{t+1})."""
    step = state.lr[:, None] * grad[None, :]
    hint = state.u_hint - step
    return hint, hint - step


def meta_update(state: AdaptState, grad: np.ndarray, u_next: np.ndarray, lam: float,
                meta_lr: float) -> tuple[np.ndarray, np.ndarray]:
    """Optimistic hedge. Returns (p_{t+1}, surrogate losses of this round)."""
    if state.t >= 2:
        loss = state.u @ grad + lam * np.sum((state.u - state.u_prev) ** 2, axis=1)
        hint = u_next @ grad + lam * np.sum((u_next - state.u) ** 2, axis=1)
    else:
        loss = state.u @ grad
        hint = lam * np.sum((u_next - state.u) ** 2, axis=1)
    p_next = stable_softmax(-meta_lr * (hint + state.cum_loss + loss))
    return p_next, loss


@dataclass
class StepRecord:
    t: int
    y_hat: float
    y: float
    loss: float
    top_learner: int


def step_parts(state: AdaptState, heads: np.ndarray, log_dens: np.ndarray, y: float,
               config: AdaptConfig) -> tuple[float, float, AdaptState]:
    u_t = state.combined()
    y_hat, grad = ensemble_gradient_parts(heads, log_dens, u_t, y)
    loss = (y_hat - y) ** 2
    hint, u_next = base_update(state, grad)
    p_next, round_loss = meta_update(state, grad, u_next, config.correction, config.meta_lr)
    if not np.all(np.abs(u_next) < U_LIMIT) or not np.all(np.isfinite(p_next)):
        raise AdaptationError(f"weights diverged at round {state.t}")
    new = AdaptState(u_next, hint, state.u, p_next, state.cum_loss + round_loss, state.lr, state.t + 1)
    return y_hat, loss, new


def adapt_step(model: MixtureModel, state: AdaptState, x, y,
               config: AdaptConfig = AdaptConfig()) -> tuple[float, float, AdaptState]:
    """Predict with the current combined weight, then consume y and update.

    The prediction depends only on ``state`` and ``x``; ``y`` is used after.
    """
    return step_parts(state, model.heads(x), model.log_density(x), float(y), config)


@dataclass
class AdaptResult:
    cumulative_loss: float
    losses: np.ndarray
    predictions: np.ndarray
    top_learner: np.ndarray
    final_state: AdaptState = field(repr=False, default=None)

    def records(self, y) -> list[StepRecord]:
        return [StepRecord(t + 1, float(p), float(yy), float(l), int(a))
                for t, (p, yy, l, a) in enumerate(zip(self.predictions, y, self.losses, self.top_learner))]


def run_adaptation(model: MixtureModel, x, y, config: AdaptConfig = AdaptConfig(),
                   state: AdaptState | None = None) -> AdaptResult:
    """Prequential pass over a stream starting from the all-zero state.

    h(x) and v(x) are computed for the whole stream up front; both are fixed
    functions of x, so this does not leak labels into predictions.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(y) == 0:
        raise ValueError("empty stream")
    heads, dens = model.heads(x), model.log_density(x)
    state = AdaptState.initial(model.K, config) if state is None else state.copy()
    T = len(y)
    preds, losses, top = np.empty(T), np.empty(T), np.empty(T, dtype=np.int64)
    for t in range(T):
        top[t] = int(np.argmax(state.p)) + 1
        preds[t], losses[t], state = step_parts(state, heads[t], dens[t], y[t], config)
    return AdaptResult(float(losses.sum()), losses, preds, top, state)


def write_trace(path, y, predictions, losses, top_learner=None) -> None:
    """One row per step: t, y_hat, y, loss, argmax_p (blank when not applicable)."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "y_hat", "y", "loss", "argmax_p"])
        for t in range(len(y)):
            top = "" if top_learner is None else int(top_learner[t])
            w.writerow([t + 1, repr(float(predictions[t])), repr(float(y[t])), repr(float(losses[t])), top])
