"""The decomposed predictor: K-headed regressor, Gaussian gating map, and mixing weights.

A prediction at time t is ``softmax(u_t + v(x)) . h(x)`` where ``h`` is an MLP
with K outputs and ``v(x)_k`` is the log-density of a diagonal Gaussian.
Every function accepts a single input (d,) or a batch (n, d); ``u`` may be a
single (K,) vector shared across the batch or one row per sample.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .neural import MlpParams, mlp_forward
from .numeric import log_softmax, log_sum_exp, stable_softmax

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class GaussianMap:
    centers: np.ndarray     # (K, d)
    log_scales: np.ndarray  # (K, d); scales = exp(log_scales)

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64)
        if self.centers.ndim != 2 or self.centers.shape != self.log_scales.shape:
            raise ValueError("centers and log_scales must both have shape (K, d)")

    @property
    def K(self) -> int:
        return self.centers.shape[0]

    @property
    def d(self) -> int:
        return self.centers.shape[1]

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def copy(self) -> "GaussianMap":
        return GaussianMap(self.centers.copy(), self.log_scales.copy())


def gaussian_log_density(gmap: GaussianMap, x) -> np.ndarray:
    """v(x)_k = log N(x; c_k, diag(s_k^2)), shape (K,) or (n, K)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != gmap.d:
        raise ValueError(f"input dimension {x.shape[-1]} != map dimension {gmap.d}")
    diff = x[..., None, :] - gmap.centers
    z2 = (diff * np.exp(-gmap.log_scales)) ** 2
    return -0.5 * gmap.d * LOG_2PI - gmap.log_scales.sum(axis=-1) - 0.5 * z2.sum(axis=-1)


@dataclass
class MixtureModel:
    h: MlpParams
    v: GaussianMap
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.h.output_dim != self.v.K:
            raise ValueError("head count and gating component count differ")
        if self.v.K < 2:
            raise ValueError("a mixture needs K >= 2 components")

    @property
    def K(self) -> int:
        return self.v.K

    @property
    def d(self) -> int:
        return self.v.d

    def heads(self, x) -> np.ndarray:
        return mlp_forward(self.h, x)

    def log_density(self, x) -> np.ndarray:
        return gaussian_log_density(self.v, x)

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "sigma": self.sigma,
            "h": self.h.to_dict(),
            "v": {
                "shape": list(self.v.centers.shape),
                "centers": self.v.centers.ravel().tolist(),
                "log_scales": self.v.log_scales.ravel().tolist(),
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureModel":
        shape = d["v"]["shape"]
        gmap = GaussianMap(
            np.asarray(d["v"]["centers"], dtype=np.float64).reshape(shape),
            np.asarray(d["v"]["log_scales"], dtype=np.float64).reshape(shape),
        )
        return cls(MlpParams.from_dict(d["h"]), gmap, float(d["sigma"]))


def save_model(model: MixtureModel, path, extra: dict | None = None) -> None:
    payload = model.to_dict()
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload))


def load_model(path) -> tuple[MixtureModel, dict]:
    """Returns the model and the raw JSON payload (for any extra keys)."""
    payload = json.loads(Path(path).read_text())
    return MixtureModel.from_dict(payload), payload


def _check_u(model: MixtureModel, u) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if u.shape[-1] != model.K:
        raise ValueError(f"weight vector length {u.shape[-1]} != K = {model.K}")
    return u


def gating(model: MixtureModel, u, x) -> np.ndarray:
    """softmax(u + v(x))."""
    u = _check_u(model, u)
    return stable_softmax(u + model.log_density(x))


def predict(model: MixtureModel, u, x):
    u = _check_u(model, u)
    out = np.sum(gating(model, u, x) * model.heads(x), axis=-1)
    return float(out) if out.ndim == 0 else out


def log_joint_component_likelihood(model: MixtureModel, u, x, y) -> np.ndarray:
    """log p(y, z = e_k | x, h, v, u) for every k."""
    u = _check_u(model, u)
    y = np.asarray(y, dtype=np.float64)[..., None]
    resid = y - model.heads(x)
    log_norm = -0.5 * LOG_2PI - np.log(model.sigma)
    return log_norm - resid**2 / (2.0 * model.sigma**2) + log_softmax(u + model.log_density(x))


def joint_component_likelihood(model: MixtureModel, u, x, y) -> np.ndarray:
    return np.exp(log_joint_component_likelihood(model, u, x, y))


def sample_log_likelihood(model: MixtureModel, u, x, y):
    """log p(y | x, h, v, u), evaluated entirely in log space."""
    return log_sum_exp(log_joint_component_likelihood(model, u, x, y))
