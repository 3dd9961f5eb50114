"""Datasets, CSV ingestion, z-score normalization, shift-simulation splits, synthetic streams."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

BLOCK_SIZE = 4000
HOLDOUT_TRAIN = 3000
# 1-based inclusive local windows inside the 4000-sample block that form the
# test stream. The third window is 1901..2100 so every window holds 200 samples.
SHIFT_TEST_WINDOWS = ((501, 700), (1201, 1400), (1901, 2100), (2601, 2800), (3301, 3500))


class IngestionError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    t: int
    x: np.ndarray
    y: float


@dataclass(frozen=True)
class NormStats:
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float

    @classmethod
    def fit(cls, x: np.ndarray, y: np.ndarray) -> "NormStats":
        x_std = x.std(axis=0)
        # constant columns keep std 1 so they normalize to 0
        x_std = np.where(x_std > 1e-12, x_std, 1.0)
        y_std = float(y.std())
        return cls(x.mean(axis=0), x_std, float(y.mean()), y_std if y_std > 1e-12 else 1.0)

    @classmethod
    def identity(cls, d: int) -> "NormStats":
        return cls(np.zeros(d), np.ones(d), 0.0, 1.0)

    def normalize_x(self, x):
        return (np.asarray(x, dtype=np.float64) - self.x_mean) / self.x_std

    def normalize_y(self, y):
        return (np.asarray(y, dtype=np.float64) - self.y_mean) / self.y_std

    def denormalize_x(self, x):
        return np.asarray(x) * self.x_std + self.x_mean

    def denormalize_y(self, y):
        return np.asarray(y) * self.y_std + self.y_mean

    def to_dict(self) -> dict:
        return {"x_mean": self.x_mean.tolist(), "x_std": self.x_std.tolist(),
                "y_mean": self.y_mean, "y_std": self.y_std}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["x_mean"], dtype=np.float64), np.asarray(d["x_std"], dtype=np.float64),
                   float(d["y_mean"]), float(d["y_std"]))


@dataclass
class Dataset:
    """Time-ordered regression samples held in normalized units.

    ``t`` holds the 1-based time index of every row; ``stats`` maps back to
    the raw units of the source.
    """

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    stats: NormStats
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.t = np.asarray(self.t, dtype=np.int64)
        if self.x.ndim != 2 or self.y.shape != (self.x.shape[0],) or self.t.shape != self.y.shape:
            raise ValueError("Dataset expects x (n, d), y (n,), t (n,)")
        if len(self.t) > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError("time indices must be strictly increasing")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("Dataset values must be finite")

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def __iter__(self) -> Iterator[Sample]:
        for t, x, y in zip(self.t, self.x, self.y):
            yield Sample(int(t), x, float(y))

    def subset(self, idx, reindex: bool = False) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        t = np.arange(1, len(idx) + 1) if reindex else self.t[idx]
        return Dataset(self.x[idx], self.y[idx], t, self.stats, self.feature_names)

    def raw_x(self) -> np.ndarray:
        return self.stats.denormalize_x(self.x)

    def raw_y(self) -> np.ndarray:
        return self.stats.denormalize_y(self.y)


def normalize(x_raw, y_raw, t=None, stats: NormStats | None = None,
              feature_names: tuple[str, ...] = ()) -> Dataset:
    """Build a Dataset, fitting z-score statistics on these rows unless ``stats`` is given."""
    x_raw = np.asarray(x_raw, dtype=np.float64)
    y_raw = np.asarray(y_raw, dtype=np.float64)
    if stats is None:
        stats = NormStats.fit(x_raw, y_raw)
    if t is None:
        t = np.arange(1, len(y_raw) + 1)
    return Dataset(stats.normalize_x(x_raw), stats.normalize_y(y_raw), t, stats, feature_names)


_NA_TOKENS = {"", "na", "nan", "n/a", "null", "none"}


def load_csv(path, target_column: str, drop_na: bool = True,
             stats: NormStats | None = None) -> Dataset:
    """Read a headered numeric CSV; every non-target column is a feature.

    Rows with a missing cell are dropped when ``drop_na`` is set, otherwise
    they raise. Normalization statistics come from the loaded rows unless
    ``stats`` is passed (e.g. to put a test stream in a model's units).
    """
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestionError(f"{path} is empty") from None
        if target_column not in header:
            raise IngestionError(f"{path}: target column {target_column!r} not in header {header}")
        tgt = header.index(target_column)
        features = [i for i in range(len(header)) if i != tgt]
        rows_x, rows_y = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestionError(f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}")
            values = []
            missing = False
            for col, cell in enumerate(row):
                cell = cell.strip()
                if cell.lower() in _NA_TOKENS:
                    if not drop_na:
                        raise IngestionError(f"{path}: row {lineno}, column {header[col]!r} is missing")
                    missing = True
                    break
                try:
                    val = float(cell)
                except ValueError:
                    raise IngestionError(
                        f"{path}: row {lineno}, column {header[col]!r}: non-numeric value {cell!r}") from None
                if not math.isfinite(val):
                    if not drop_na:
                        raise IngestionError(f"{path}: row {lineno}, column {header[col]!r} is not finite")
                    missing = True
                    break
                values.append(val)
            if missing:
                continue
            rows_y.append(values[tgt])
            rows_x.append([values[i] for i in features])
    if not rows_y:
        raise IngestionError(f"{path}: no complete rows")
    names = tuple(header[i] for i in features)
    return normalize(np.asarray(rows_x).reshape(len(rows_y), len(features)), np.asarray(rows_y),
                     stats=stats, feature_names=names)


def write_csv(path, x_raw: np.ndarray, y_raw: np.ndarray, feature_names=None, target: str = "y") -> None:
    x_raw = np.asarray(x_raw)
    names = list(feature_names) if feature_names else [f"x{i + 1}" for i in range(x_raw.shape[1])]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names + [target])
        for xi, yi in zip(x_raw, y_raw):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])


@dataclass
class ShiftSplit:
    train: Dataset
    test: Dataset
    protocol: str
    block_start: int                # 0-based offset of the block in the source
    test_local: np.ndarray          # 1-based local indices of test rows in the block


def _block_start(n: int, rng: np.random.Generator) -> int:
    if n < BLOCK_SIZE:
        raise ValueError(f"need at least {BLOCK_SIZE} samples, got {n}")
    return int(rng.integers(0, n - BLOCK_SIZE + 1))


def _split_block(data: Dataset, start: int, test_mask: np.ndarray, protocol: str) -> ShiftSplit:
    local = np.arange(1, BLOCK_SIZE + 1)
    idx = start + local - 1
    return ShiftSplit(
        train=data.subset(idx[~test_mask]),
        test=data.subset(idx[test_mask]),
        protocol=protocol,
        block_start=start,
        test_local=local[test_mask],
    )


def shift_test_mask() -> np.ndarray:
    local = np.arange(1, BLOCK_SIZE + 1)
    mask = np.zeros(BLOCK_SIZE, dtype=bool)
    for lo, hi in SHIFT_TEST_WINDOWS:
        mask |= (local >= lo) & (local <= hi)
    return mask


def shift_split(data: Dataset, rng: np.random.Generator) -> ShiftSplit:
    """Random 4000-sample block; five interior windows (1000 samples) become the test stream."""
    start = _block_start(len(data), rng)
    return _split_block(data, start, shift_test_mask(), "shift")


def holdout_split(data: Dataset, rng: np.random.Generator) -> ShiftSplit:
    """Random 4000-sample block; first 3000 train, next 1000 test."""
    start = _block_start(len(data), rng)
    mask = np.arange(1, BLOCK_SIZE + 1) > HOLDOUT_TRAIN
    return _split_block(data, start, mask, "holdout")


# ---------------------------------------------------------------------------
# synthetic source-component-shift generator


@dataclass(frozen=True)
class PiecewiseSchedule:
    """Piecewise-constant mixing weights.

    Segment ``j`` covers times ``starts[j] .. starts[j+1]-1`` (1-based) and
    uses ``weights[j]``; the last segment extends forever.
    """

    starts: tuple[int, ...]
    weights: tuple[tuple[float, ...], ...]

    def __call__(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t))
        seg = np.searchsorted(np.asarray(self.starts), t, side="right") - 1
        return np.asarray(self.weights, dtype=np.float64)[np.clip(seg, 0, None)]

    def to_dict(self) -> dict:
        return {"kind": "piecewise", "starts": list(self.starts), "weights": [list(w) for w in self.weights]}


@dataclass(frozen=True)
class SinusoidalSchedule:
    """w_k(t) proportional to 1 + amplitude * sin(2 pi t / period + 2 pi k / K)."""

    K: int
    period: float
    amplitude: float = 0.9

    def __call__(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        phase = 2 * np.pi * np.arange(self.K) / self.K
        raw = 1.0 + self.amplitude * np.sin(2 * np.pi * t[:, None] / self.period + phase)
        return raw / raw.sum(axis=1, keepdims=True)

    def to_dict(self) -> dict:
        return {"kind": "sinusoidal", "K": self.K, "period": self.period, "amplitude": self.amplitude}


def cycling_schedule(K: int, runs: list[tuple[int, int, int]], dominant: float = 0.8) -> PiecewiseSchedule:
    """Dominance cycles 1, 2, ..., K, 1, ... over consecutive segments.

    ``runs`` holds (first_time, last_time, segment_length) triples; each run
    is chopped into segments and the cycle continues across runs. The
    dominant component gets weight ``dominant``, the others share the rest.
    """
    if K == 1:
        return PiecewiseSchedule((1,), ((1.0,),))
    rest = (1.0 - dominant) / (K - 1)
    starts, weights = [], []
    j = 0
    for first, last, length in runs:
        for s in range(first, last + 1, length):
            w = [rest] * K
            w[j % K] = dominant
            starts.append(s)
            weights.append(tuple(w))
            j += 1
    return PiecewiseSchedule(tuple(starts), tuple(weights))


@dataclass(frozen=True)
class SynthSpec:
    """K_true linear-Gaussian source components plus a mixing-weight schedule."""

    centers: np.ndarray      # (K, d) input means
    scales: np.ndarray       # (K, d) input stds
    slopes: np.ndarray       # (K, d)
    intercepts: np.ndarray   # (K,)
    noise_std: np.ndarray    # (K,)
    schedule: PiecewiseSchedule | SinusoidalSchedule

    @property
    def K(self) -> int:
        return np.asarray(self.centers).shape[0]

    @property
    def d(self) -> int:
        return np.asarray(self.centers).shape[1]

    def true_means(self, x_raw) -> np.ndarray:
        """mu_k(x) = slope_k . x + intercept_k in raw units, shape (n, K)."""
        return np.asarray(x_raw) @ np.asarray(self.slopes).T + np.asarray(self.intercepts)

    def check(self, N: int) -> None:
        w = self.schedule(np.arange(1, N + 1))
        if w.shape[1] != self.K:
            raise ValueError("schedule width != number of components")
        if not np.allclose(w.sum(axis=1), 1.0, atol=1e-9) or np.any(w < 0):
            raise ValueError("schedule weights must lie on the simplex")
        if np.any(w.max(axis=0) <= 0):
            raise ValueError("every component needs positive weight somewhere in the training range")

    def to_dict(self) -> dict:
        return {
            "centers": np.asarray(self.centers).tolist(), "scales": np.asarray(self.scales).tolist(),
            "slopes": np.asarray(self.slopes).tolist(), "intercepts": np.asarray(self.intercepts).tolist(),
            "noise_std": np.asarray(self.noise_std).tolist(), "schedule": self.schedule.to_dict(),
        }


# Inputs sit on the three given centers with unit scales, so neighbouring
# components overlap only near their boundaries. Intercepts are 0.8 apart
# (8 noise stds), which keeps every component identifiable from y, while the
# offline error from the overlap regions is about twice the noise variance.
SYNTH_CENTERS = ((-3.0, 0.0), (0.0, 3.0), (3.0, 0.0))
SYNTH_SLOPES = ((0.1, 0.05), (-0.05, 0.1), (0.05, -0.1))
SYNTH_INTERCEPTS = (0.8, -0.8, 0.0)
SYNTH_NOISE = 0.1


def _synth_spec(runs, dominant: float, center_scale: float = 1.0) -> SynthSpec:
    K = len(SYNTH_CENTERS)
    return SynthSpec(
        centers=center_scale * np.array(SYNTH_CENTERS),
        scales=np.ones((K, 2)),
        slopes=np.array(SYNTH_SLOPES),
        intercepts=np.array(SYNTH_INTERCEPTS),
        noise_std=np.full(K, SYNTH_NOISE),
        schedule=cycling_schedule(K, runs, dominant),
    )


def default_synth_spec(N: int = 3000, T: int = 1000, test_segment: int = 200,
                       dominant: float = 1.0) -> SynthSpec:
    """Three well-separated linear components in 2-d.

    Training dominance cycles every N/6 samples, test dominance every
    ``test_segment`` samples.
    """
    runs = [(1, N, max(1, N // 6))]
    if T > 0:
        runs.append((N + 1, N + T, test_segment))
    return _synth_spec(runs, dominant)


def shift_synth_spec(total: int = BLOCK_SIZE, segment: int = 700, dominant: float = 1.0,
                     center_scale: float = 0.5) -> SynthSpec:
    """The default components over one stream of ``total`` samples, centers pulled in.

    Scaling the centers by ``center_scale`` makes the input regions overlap,
    so x alone no longer tells which component is active and a static
    regressor has to average over them. With 700-sample segments each
    shift-protocol test window lies inside a single segment, and consecutive
    windows have different dominant components.
    """
    return _synth_spec([(1, total, segment)], dominant, center_scale)


@dataclass
class SynthTruth:
    assignments: np.ndarray   # (N+T,) 1-based component labels
    weights: np.ndarray       # (N+T, K)
    spec: SynthSpec
    N: int
    T: int

    def to_dict(self) -> dict:
        return {"N": self.N, "T": self.T, "assignments": self.assignments.tolist(),
                "weights": self.weights.tolist(), "spec": self.spec.to_dict()}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))


@dataclass
class SynthData:
    train: Dataset
    test: Dataset
    truth: SynthTruth
    full: Dataset = field(repr=False, default=None)


def synth_generate(spec: SynthSpec, N: int, T: int, rng: np.random.Generator,
                   normalize_data: bool = True) -> SynthData:
    """Draw z_t ~ Cat(w(t)), x_t ~ N(c_z, diag(s_z^2)), y_t = slope_z . x_t + b_z + noise.

    Train covers t = 1..N, test t = N+1..N+T. Normalization statistics are
    fitted once over all N+T samples.
    """
    spec.check(N)
    total = N + T
    t = np.arange(1, total + 1)
    w = spec.schedule(t)
    # inverse-CDF categorical draw, vectorized over t
    u = rng.random(total)
    z = np.minimum((u[:, None] > np.cumsum(w, axis=1)).sum(axis=1), spec.K - 1)
    centers, scales = np.asarray(spec.centers), np.asarray(spec.scales)
    x = centers[z] + scales[z] * rng.standard_normal((total, spec.d))
    noise = np.asarray(spec.noise_std)[z] * rng.standard_normal(total)
    y = np.einsum("nd,nd->n", x, np.asarray(spec.slopes)[z]) + np.asarray(spec.intercepts)[z] + noise
    stats = NormStats.fit(x, y) if normalize_data else NormStats.identity(spec.d)
    full = normalize(x, y, t, stats=stats)
    train = full.subset(np.arange(N))
    test = full.subset(np.arange(N, total))
    return SynthData(train, test, SynthTruth(z + 1, w, spec, N, T), full)
