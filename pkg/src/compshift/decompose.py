"""Offline source component decomposition by EM.

The E-step computes exact posterior responsibilities; the M-step takes a
fixed number of full-batch Adam steps on the regularized loss

    sum_t  gamma_t . (y_t - h(x_t))^2 / (2 sigma^2)  -  sum_k gamma_tk log g_tk
         + alpha * sum_t ||u_t - u_{t+1}||^2          (u_{N+1} = 0)
         + beta  * sum_t sum_k g_tk log g_tk

with g_t = softmax(u_t + v(x_t)) jointly over the head MLP, the Gaussian
centers / log-scales and every per-sample weight vector u_t.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .mixture import GaussianMap, MixtureModel, gaussian_log_density
from .neural import Adam, MlpConfig, TrainRecipe, _backward_cache, _forward_cache, mlp_forward, train_supervised
from .numeric import log_softmax

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
LOG_FLOOR = float(np.log(PROB_FLOOR))


class DecompositionError(RuntimeError):
    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (outer iteration {iteration})")
        self.iteration = iteration


@dataclass(frozen=True)
class EmConfig:
    learning_rate: float = 0.01
    smoothing_rate: float = 0.1
    entropy_rate: float = 0.1
    m_step_epochs: int = 20
    max_outer_iters: int = 50
    rel_tol: float = 1e-4
    hidden_dim: int = 128
    # decoupled decay on the head MLP only; u_t and the Gaussian map are not decayed
    weight_decay: float = 1e-4
    init_recipe: TrainRecipe = field(default_factory=TrainRecipe)

    def __post_init__(self):
        if min(self.learning_rate, self.smoothing_rate, self.entropy_rate) <= 0:
            raise ValueError("learning, smoothing and entropy rates must be positive")
        if self.m_step_epochs < 1 or self.max_outer_iters < 1:
            raise ValueError("iteration counts must be >= 1")


@dataclass
class EmResult:
    model: MixtureModel
    weights: np.ndarray       # (N, K) training-phase u_t
    allocation: np.ndarray    # (N, K) responsibilities from a final E-step
    losses: list[float]       # M-step loss at the end of each outer iteration
    init_loss: float          # loss of the initialized model under the first allocation
    m_step_traces: list[list[float]] = field(default_factory=list)
    converged: bool = False

    def __iter__(self):
        # allows ``model, weights, allocation = run_em(...)``
        return iter((self.model, self.weights, self.allocation))


def head_offsets(K: int, sigma: float) -> np.ndarray:
    """Initial head offsets: head k targets y - 3 sigma (2k - K - 1) / (K - 1)."""
    k = np.arange(1, K + 1)
    return 3.0 * sigma * (2 * k - K - 1) / (K - 1)


def init_h(data: Dataset, K: int, sigma: float, rng: np.random.Generator,
           hidden_dim: int = 128, recipe: TrainRecipe = TrainRecipe()):
    """Fit a K-headed MLP whose heads are spread evenly over [y - 3 sigma, y + 3 sigma]."""
    if K < 2 or not sigma > 0:
        raise ValueError("init_h needs K >= 2 and sigma > 0")
    if len(data) < 10:
        raise ValueError(f"need at least 10 samples, got {len(data)}")
    targets = data.y[:, None] - head_offsets(K, sigma)[None, :]
    config = MlpConfig(data.d, hidden_dim, K)
    return train_supervised(data.x, targets, config, recipe, rng).params


def init_v(d: int, K: int, rng: np.random.Generator) -> GaussianMap:
    return GaussianMap(rng.standard_normal((K, d)), np.zeros((K, d)))


def e_step(model: MixtureModel, weights: np.ndarray, data: Dataset, floor: float = PROB_FLOOR) -> np.ndarray:
    """Posterior responsibilities gamma_t, clamped at ``floor`` and renormalized."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(data), model.K):
        raise ValueError(f"weights shape {weights.shape} != ({len(data)}, {model.K})")
    resid = data.y[:, None] - model.heads(data.x)
    logits = -resid**2 / (2.0 * model.sigma**2) + log_softmax(weights + model.log_density(data.x))
    gamma = np.exp(log_softmax(logits))
    if floor > 0:
        gamma = np.maximum(gamma, floor)
    return gamma / gamma.sum(axis=1, keepdims=True)


def _loss_and_grads(model: MixtureModel, weights: np.ndarray, data: Dataset, gamma: np.ndarray,
                    alpha: float, beta: float, with_grads: bool = True):
    x, y = data.x, data.y
    sig2 = model.sigma**2
    heads, cache = _forward_cache(model.h, x)
    diff = x[:, None, :] - model.v.centers           # (N, K, d)
    inv_var = np.exp(-2.0 * model.v.log_scales)      # (K, d)
    dens = gaussian_log_density(model.v, x)
    raw_lg = log_softmax(weights + dens)
    g = np.exp(raw_lg)
    live = raw_lg > LOG_FLOOR
    lg = np.where(live, raw_lg, LOG_FLOOR)

    resid = heads - y[:, None]
    nxt = np.vstack([weights[1:], np.zeros((1, model.K))])
    step = weights - nxt
    loss = (np.sum(gamma * resid**2) / (2.0 * sig2) - np.sum(gamma * lg)
            + alpha * np.sum(step**2) + beta * np.sum(g * lg))
    if not with_grads:
        return float(loss), None

    d_heads = gamma * resid / sig2
    gm = gamma * live
    wgt = lg + live
    d_logits = (-gm + g * gm.sum(axis=1, keepdims=True)
                + beta * g * (wgt - np.sum(g * wgt, axis=1, keepdims=True)))
    d_weights = d_logits + 2.0 * alpha * step
    d_weights[1:] -= 2.0 * alpha * step[:-1]
    d_centers = np.einsum("nk,nkd->kd", d_logits, diff) * inv_var
    d_log_scales = np.einsum("nk,nkd->kd", d_logits, diff**2) * inv_var - d_logits.sum(axis=0)[:, None]
    d_h = _backward_cache(model.h, cache, d_heads)
    return float(loss), d_h.arrays() + [d_centers, d_log_scales, d_weights]


def m_step_loss(model: MixtureModel, weights, data: Dataset, gamma, alpha: float, beta: float) -> float:
    """Regularized M-step objective (see module docstring); gating clamped at 1e-12 before logs."""
    return _loss_and_grads(model, np.asarray(weights, dtype=np.float64), data, gamma, alpha, beta,
                           with_grads=False)[0]


def m_step_grads(model: MixtureModel, weights, data: Dataset, gamma, alpha: float, beta: float):
    """Loss and gradients ordered as [W1, b1, W2, b2, W3, b3, centers, log_scales, weights]."""
    return _loss_and_grads(model, np.asarray(weights, dtype=np.float64), data, gamma, alpha, beta)


def run_em(data: Dataset, K: int, sigma: float, config: EmConfig = EmConfig(),
           rng: np.random.Generator | None = None) -> EmResult:
    if not 2 <= K <= 10:
        raise ValueError(f"K must lie in [2, 10], got {K}")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if len(data) < 10:
        raise ValueError(f"need at least 10 samples, got {len(data)}")
    if rng is None:
        raise ValueError("run_em needs an explicit rng")

    h = init_h(data, K, sigma, rng, config.hidden_dim, config.init_recipe)
    v = init_v(data.d, K, rng)
    model = MixtureModel(h, v, sigma)
    weights = np.zeros((len(data), K))
    params = h.arrays() + [v.centers, v.log_scales, weights]
    opt = Adam(params, lr=config.learning_rate, weight_decay=config.weight_decay,
               decay_mask=[True] * len(h.arrays()) + [False, False, False])
    alpha, beta = config.smoothing_rate, config.entropy_rate

    losses, traces = [], []
    init_loss = None
    converged = False
    for it in range(1, config.max_outer_iters + 1):
        gamma = e_step(model, weights, data)
        trace = []
        for _ in range(config.m_step_epochs):
            loss, grads = m_step_grads(model, weights, data, gamma, alpha, beta)
            if not np.isfinite(loss):
                raise DecompositionError("non-finite M-step loss", it)
            trace.append(loss)
            opt.step(params, grads)
        if init_loss is None:
            init_loss = trace[0]
        loss = m_step_loss(model, weights, data, gamma, alpha, beta)
        if not np.isfinite(loss) or not all(np.all(np.isfinite(p)) for p in params):
            raise DecompositionError("non-finite loss or parameters after M-step", it)
        trace.append(loss)
        traces.append(trace)
        log.debug(json.dumps({"event": "em_iter", "K": K, "iter": it, "loss": loss,
                              "m_step_start": trace[0]}))
        if losses and abs(losses[-1] - loss) / max(abs(losses[-1]), 1e-12) < config.rel_tol:
            losses.append(loss)
            converged = True
            break
        losses.append(loss)

    gamma = e_step(model, weights, data)
    return EmResult(model, weights, gamma, losses, init_loss, traces, converged)


