"""Shared numeric kernels: stable softmax / log-sum-exp, simplex checks, seeded RNGs.

All arrays are float64. Reductions act on the last axis so the same kernel
serves a single vector of length K and an (n, K) batch.
"""
from __future__ import annotations

import numpy as np

SIMPLEX_TOL = 1e-9


def _as_float_array(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim == 0 or arr.shape[-1] == 0:
        raise ValueError("expected a non-empty vector")
    return arr


def log_sum_exp(v, axis: int = -1) -> np.ndarray | float:
    """log(sum(exp(v))) along ``axis`` with max-subtraction."""
    arr = _as_float_array(v)
    vmax = np.max(arr, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(arr - vmax), axis=axis)) + np.squeeze(vmax, axis=axis)
    if out.ndim == 0:
        return float(out)
    return out


def log_softmax(v, axis: int = -1) -> np.ndarray:
    arr = _as_float_array(v)
    vmax = np.max(arr, axis=axis, keepdims=True)
    shifted = arr - vmax
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def stable_softmax(v, axis: int = -1) -> np.ndarray:
    """Softmax computed via max-subtraction; never overflows."""
    arr = _as_float_array(v)
    e = np.exp(arr - np.max(arr, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def is_simplex(p, tol: float = SIMPLEX_TOL) -> bool:
    """True if every row of ``p`` lies on the probability simplex."""
    arr = np.asarray(p, dtype=np.float64)
    if arr.size == 0 or not np.all(np.isfinite(arr)):
        return False
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        return False
    return bool(np.all(np.abs(arr.sum(axis=-1) - 1.0) <= tol))


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator on the Philox counter-based bit generator.

    Philox is used everywhere in the package so that a given integer seed
    yields the same draw sequence on every platform and numpy build.
    """
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def spawn_seed(rng: np.random.Generator) -> int:
    """Draw a fresh 63-bit seed from ``rng`` for a derived stream."""
    return int(rng.integers(0, 2**63 - 1))
