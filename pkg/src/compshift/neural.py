"""Three-layer Swish MLP with hand-written backprop, Adam, and the full-batch recipe."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

N_LAYERS = 3


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden_dim: int = 128
    output_dim: int = 1

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden_dim < 1 or self.output_dim < 1:
            raise ValueError(f"all MLP dimensions must be positive, got {self}")

    @property
    def layers(self) -> int:
        return N_LAYERS


@dataclass(frozen=True)
class TrainRecipe:
    epochs: int = 200
    learning_rate: float = 0.01
    weight_decay: float = 1e-4
    validation_fraction: float = 0.10

    def __post_init__(self):
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class MlpParams:
    """Weights ``W[l]`` of shape (fan_out, fan_in) and biases ``b[l]``."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def config(self) -> MlpConfig:
        return MlpConfig(self.input_dim, self.hidden_dim, self.output_dim)

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order: W1, b1, W2, b2, W3, b3."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    @classmethod
    def from_arrays(cls, arrays) -> "MlpParams":
        arrays = list(arrays)
        return cls(weights=arrays[0::2], biases=arrays[1::2])

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def to_dict(self) -> dict:
        return {
            "layout": "row-major; W[l] has shape (fan_out, fan_in)",
            "weights": [{"shape": list(w.shape), "values": w.ravel().tolist()} for w in self.weights],
            "biases": [{"shape": list(b.shape), "values": b.ravel().tolist()} for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpParams":
        def unpack(entry):
            return np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])

        return cls([unpack(e) for e in d["weights"]], [unpack(e) for e in d["biases"]])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "MlpParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


def swish(z):
    return z * expit(z)


def swish_grad(z):
    s = expit(z)
    return s + z * s * (1.0 - s)


def mlp_init(config: MlpConfig, rng: np.random.Generator) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    dims = [config.input_dim, config.hidden_dim, config.hidden_dim, config.output_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def _check_input(params: MlpParams, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != params.input_dim:
        raise ValueError(f"input has shape {x.shape}, expected (..., {params.input_dim})")
    return x2, single


def _forward_cache(params: MlpParams, x: np.ndarray):
    # cache keeps (pre-activation, sigmoid(pre-activation)) per hidden layer
    hidden, acts = [], [x]
    a = x
    n = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T
        z += b
        if i < n - 1:
            s = expit(z)
            hidden.append((z, s))
            a = z * s
        else:
            a = z
        acts.append(a)
    return a, (hidden, acts)


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    """Network output for one input (d,) or a batch (n, d)."""
    x2, single = _check_input(params, x)
    out, _ = _forward_cache(params, x2)
    return out[0] if single else out


def _backward_cache(params: MlpParams, cache, upstream: np.ndarray) -> MlpParams:
    hidden, acts = cache
    n = len(params.weights)
    gw, gb = [None] * n, [None] * n
    delta = upstream
    for i in reversed(range(n)):
        if i < n - 1:
            z, s = hidden[i]
            # d swish / dz = s * (1 + z * (1 - s))
            delta = delta * (s * (1.0 + z * (1.0 - s)))
        gw[i] = delta.T @ acts[i]
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ params.weights[i]
    return MlpParams(gw, gb)


def backward(params: MlpParams, x, upstream) -> MlpParams:
    """Gradient of sum(upstream * output) w.r.t. the parameters.

    For a batch the per-sample gradients are summed.
    """
    x2, single = _check_input(params, x)
    up = np.asarray(upstream, dtype=np.float64)
    up2 = up[None, :] if single else up
    if up2.shape != (x2.shape[0], params.output_dim):
        raise ValueError(f"upstream has shape {up.shape}, expected output_dim {params.output_dim}")
    _, cache = _forward_cache(params, x2)
    return _backward_cache(params, cache, up2)


def forward_backward(params: MlpParams, x: np.ndarray, grad_fn):
    """Run forward, let ``grad_fn(out)`` return (loss, dloss/dout), then backprop."""
    out, cache = _forward_cache(params, x)
    loss, upstream = grad_fn(out)
    return loss, _backward_cache(params, cache, upstream)


class Adam:
    """Adam with bias correction and decoupled weight decay.

    Operates in place on a list of arrays. ``decay_mask`` selects which arrays
    receive weight decay (all by default).
    """

    def __init__(self, params: list[np.ndarray], lr: float = 0.01, weight_decay: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 decay_mask: list[bool] | None = None):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0
        self.decay_mask = [True] * len(params) if decay_mask is None else list(decay_mask)
        if len(self.decay_mask) != len(params):
            raise ValueError("decay_mask length must match number of parameter arrays")

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise ValueError("parameter / gradient list does not match optimizer state")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v, decay in zip(params, grads, self.m, self.v, self.decay_mask):
            if p.shape != g.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            if decay and self.weight_decay:
                p *= 1.0 - self.lr * self.weight_decay
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def mse(params: MlpParams, x: np.ndarray, targets: np.ndarray) -> float:
    return float(np.mean((mlp_forward(params, x) - targets) ** 2))


def mse_loss_and_grad(params: MlpParams, x: np.ndarray, targets: np.ndarray):
    def grad_fn(out):
        r = out - targets
        return float(np.mean(r * r)), 2.0 * r / r.size

    return forward_backward(params, x, grad_fn)


@dataclass
class TrainResult:
    params: MlpParams
    best_epoch: int
    val_history: list[float] = field(default_factory=list)
    train_history: list[float] = field(default_factory=list)


def train_supervised(x, targets, config: MlpConfig, recipe: TrainRecipe,
                     rng: np.random.Generator) -> TrainResult:
    """Full-batch Adam on MSE, keeping the snapshot with the lowest validation MSE.

    ``targets`` has shape (n,) or (n, output_dim). A random ``validation_fraction``
    of rows is held out; the validation error is recorded before the first
    update (epoch 0) and after every epoch.
    """
    x = np.asarray(x, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim == 1:
        targets = targets[:, None]
    n = x.shape[0]
    if n < 10:
        raise ValueError(f"need at least 10 samples to train, got {n}")
    if targets.shape != (n, config.output_dim):
        raise ValueError(f"targets shape {targets.shape} does not match (n, {config.output_dim})")

    n_val = max(1, int(round(recipe.validation_fraction * n)))
    perm = rng.permutation(n)
    val_idx, tr_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    x_tr, t_tr = x[tr_idx], targets[tr_idx]
    x_va, t_va = x[val_idx], targets[val_idx]

    params = mlp_init(config, rng)
    arrays = params.arrays()
    opt = Adam(arrays, lr=recipe.learning_rate, weight_decay=recipe.weight_decay)

    best = params.copy()
    best_val = mse(params, x_va, t_va)
    best_epoch = 0
    val_history, train_history = [best_val], []
    for epoch in range(1, recipe.epochs + 1):
        loss, grads = mse_loss_and_grad(params, x_tr, t_tr)
        train_history.append(loss)
        opt.step(arrays, grads.arrays())
        val = mse(params, x_va, t_va)
        val_history.append(val)
        if val < best_val:
            best_val, best, best_epoch = val, params.copy(), epoch
    return TrainResult(best, best_epoch, val_history, train_history)
