"""Data-driven choice of the component count K and the noise scale sigma.

The stream is split by diverting every (m+1)-th sample to validation. A
single-output MLP fitted on the training part gives a reference error xi;
each candidate K' is decomposed with sigma = xi / sqrt(K') and scored by the
held-out log-likelihood, where validation sample i borrows the training
weight u at index m*i.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .decompose import DecompositionError, EmConfig, EmResult, run_em
from .mixture import MixtureModel, sample_log_likelihood
from .neural import MlpConfig, TrainRecipe, mlp_forward, train_supervised
from .numeric import make_rng

log = logging.getLogger(__name__)

DEFAULT_CANDIDATES = tuple(range(2, 11))


class SelectionError(RuntimeError):
    pass


@dataclass
class InterleavedSplit:
    train: Dataset
    validation: Dataset
    m: int
    val_index_map: np.ndarray   # 1-based training index shared by each validation sample
    val_positions: np.ndarray   # 1-based positions of validation samples in the input


def interleaved_split(data: Dataset, m: int = 4) -> InterleavedSplit:
    """Every (m+1)-th sample goes to validation; the rest keep contiguous indices.

    >>> # |D| = 10, m = 4: validation = positions 5 and 10, sharing training indices 4 and 8
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    n = len(data)
    if n < 2 * (m + 1):
        raise ValueError(f"need at least {2 * (m + 1)} samples for m = {m}, got {n}")
    pos = np.arange(1, n + 1)
    is_val = pos % (m + 1) == 0
    train = data.subset(np.flatnonzero(~is_val), reindex=True)
    validation = data.subset(np.flatnonzero(is_val), reindex=True)
    i = np.arange(1, int(is_val.sum()) + 1)
    index_map = np.clip(m * i, 1, len(train))
    return InterleavedSplit(train, validation, m, index_map, pos[is_val])


def compute_xi(split: InterleavedSplit, rng: np.random.Generator, hidden_dim: int = 128,
               recipe: TrainRecipe = TrainRecipe()) -> float:
    """Validation RMSE of a single-output MLP trained on the training part."""
    config = MlpConfig(split.train.d, hidden_dim, 1)
    params = train_supervised(split.train.x, split.train.y, config, recipe, rng).params
    pred = mlp_forward(params, split.validation.x)[:, 0]
    return float(np.sqrt(np.mean((pred - split.validation.y) ** 2)))


def validation_log_likelihood(model: MixtureModel, weights: np.ndarray, split: InterleavedSplit) -> float:
    u = np.asarray(weights)[split.val_index_map - 1]
    return float(np.sum(sample_log_likelihood(model, u, split.validation.x, split.validation.y)))


@dataclass
class CandidateResult:
    K: int
    sigma: float
    log_likelihood: float
    seed: int
    outer_iters: int = 0
    converged: bool = False
    seconds: float = 0.0
    error: str | None = None

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        # JSON has no -inf; failed candidates are reported as null
        if not math.isfinite(d["log_likelihood"]):
            d["log_likelihood"] = None
        return d


@dataclass
class KSelectionReport:
    xi: float
    chosen_K: int
    candidates: list[CandidateResult]
    m: int = 4
    seed: int = 0
    results: dict[int, EmResult] = field(default_factory=dict, repr=False)

    @property
    def log_likelihoods(self) -> dict[int, float]:
        return {c.K: c.log_likelihood for c in self.candidates}

    @property
    def chosen(self) -> EmResult:
        return self.results[self.chosen_K]

    def to_dict(self) -> dict:
        return {"xi": self.xi, "chosen_K": self.chosen_K, "m": self.m, "seed": self.seed,
                "candidates": [c.to_dict() for c in self.candidates]}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def argmax_smallest(scores: dict[int, float]) -> int:
    """Key with the largest finite score; ties go to the smaller key."""
    finite = {k: s for k, s in scores.items() if math.isfinite(s)}
    if not finite:
        raise SelectionError("every candidate produced a non-finite log-likelihood")
    best = max(finite.values())
    return min(k for k, s in finite.items() if s == best)


def select_k(data: Dataset, em_config: EmConfig = EmConfig(), seed: int = 0,
             candidates=DEFAULT_CANDIDATES, m: int = 4) -> tuple[MixtureModel, KSelectionReport]:
    """Sweep K' over ``candidates`` and keep the decomposition with the best held-out likelihood.

    All randomness derives from ``seed``: xi uses ``make_rng(seed)`` and
    candidate K' uses ``make_rng(seed ^ K')``.
    """
    if len(data) < 100:
        raise ValueError(f"select_k needs at least 100 samples, got {len(data)}")
    split = interleaved_split(data, m)
    xi = compute_xi(split, make_rng(seed), em_config.hidden_dim, em_config.init_recipe)
    if not xi > 0:
        raise SelectionError(f"reference error xi = {xi} leaves sigma undefined")

    results: dict[int, EmResult] = {}
    rows = []
    for K in candidates:
        sigma = xi / math.sqrt(K)
        start = time.perf_counter()
        row = CandidateResult(K, sigma, -math.inf, seed ^ K)
        try:
            res = run_em(split.train, K, sigma, em_config, make_rng(seed ^ K))
            ll = validation_log_likelihood(res.model, res.weights, split)
            row.log_likelihood = ll if math.isfinite(ll) else -math.inf
            row.outer_iters, row.converged = len(res.losses), res.converged
            results[K] = res
        except DecompositionError as exc:
            row.error = str(exc)
        row.seconds = time.perf_counter() - start
        log.info(json.dumps({"event": "select_k_candidate", **row.to_dict()}))
        rows.append(row)

    chosen = argmax_smallest({r.K: r.log_likelihood for r in rows})
    report = KSelectionReport(xi, chosen, rows, m, seed, results)
    return results[chosen].model, report
