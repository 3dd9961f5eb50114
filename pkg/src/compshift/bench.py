"""Multi-seed benchmark harness: paired trials, aggregates, CSV / JSON reports.

A trial is (method, seed). For a given seed every method sees the same data
draw and the same split, so results are paired across methods. Trial ``i``
uses seed ``seed_base + i``; each stage (data, split, fit) draws from its own
stream derived from that seed, so adding methods never changes the data.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adapt import AdaptConfig, run_adaptation, write_trace
from .baselines import OGD, BaselineConfig, offline_run, ogd_run
from .data import Dataset, default_synth_spec, holdout_split, load_csv, shift_split, shift_synth_spec, synth_generate
from .decompose import EmConfig
from .neural import TrainRecipe
from .numeric import make_rng
from .select_k import select_k

log = logging.getLogger(__name__)

PIPELINE, OFFLINE_M, OGD_M = "pipeline", "offline", "ogd"
METHODS = (PIPELINE, OFFLINE_M, OGD_M)
PROTOCOLS = ("shift", "holdout", "synth")
SUMMARY_COLUMNS = ("method", "mean", "std", "gain_percent", "trials")

# stage identifiers mixed into the trial seed
_DATA, _SPLIT, _FIT = 0, 1, 2


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


def stage_seed(seed: int, stage: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(stage)]).generate_state(1, np.uint64)[0])


def gain_percent(ours: float, best_baseline: float) -> float:
    """(ours - best) / best * 100; negative means the pipeline is better."""
    return (ours - best_baseline) / best_baseline * 100.0


@dataclass
class BenchConfig:
    methods: tuple[str, ...] = METHODS
    protocol: str = "synth"
    data: str = ""                 # CSV path; empty means synthetic data
    target: str = "y"
    trials: int = 30
    seed: int = 0
    out: str = "bench_out"
    trace: bool = False
    ogd_lr: float = 1e-3
    k_min: int = 2
    k_max: int = 10
    synth_dominant: float = 1.0

    def __post_init__(self):
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError("methods", f"unknown method {m!r}; choose from {', '.join(METHODS)}")
        if not self.methods:
            raise ConfigError("methods", "at least one method is required")
        if self.protocol not in PROTOCOLS:
            raise ConfigError("protocol", f"must be one of {', '.join(PROTOCOLS)}")
        if self.trials < 1:
            raise ConfigError("trials", "must be >= 1")
        if not 2 <= self.k_min <= self.k_max <= 10:
            raise ConfigError("k_min", "need 2 <= k_min <= k_max <= 10")
        if self.protocol == "synth" and self.data:
            raise ConfigError("data", "the synth protocol generates its own data")

    @property
    def candidates(self) -> tuple[int, ...]:
        return tuple(range(self.k_min, self.k_max + 1))


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(BenchConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind.startswith("tuple"):
            return tuple(s.strip() for s in raw.split(",") if s.strip())
        return raw
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {kind}") from None


def parse_config(text: str, overrides: dict | None = None) -> BenchConfig:
    """Flat ``key = value`` lines; ``#`` starts a comment. Overrides win.

    Keys are the BenchConfig field names; lists are comma-separated.
    """
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, f"line {lineno} is not of the form key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(key, f"unknown key on line {lineno}")
        values[key] = _coerce(key, raw)
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(key, "unknown key")
        values[key] = _coerce(key, val) if isinstance(val, str) else val
    return BenchConfig(**values)


@dataclass
class TrialReport:
    method: str
    seed: int
    cumulative_loss: float
    chosen_K: int | None = None
    fit_seconds: float = 0.0
    adapt_seconds: float = 0.0
    failed: bool = False
    error: str | None = None
    losses: np.ndarray | None = field(default=None, repr=False)
    predictions: np.ndarray | None = field(default=None, repr=False)
    targets: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        loss = self.cumulative_loss if math.isfinite(self.cumulative_loss) else None
        return {"method": self.method, "seed": self.seed, "cumulative_loss": loss,
                "chosen_K": self.chosen_K, "fit_seconds": self.fit_seconds,
                "adapt_seconds": self.adapt_seconds, "failed": self.failed, "error": self.error}


@dataclass
class MethodSummary:
    method: str
    mean: float
    std: float
    trials: int
    failed: int = 0


@dataclass
class BenchmarkReport:
    config: BenchConfig
    trials: list[TrialReport]
    summaries: dict[str, MethodSummary]
    gain: float | None    # pipeline versus the best baseline, percent

    def to_dict(self) -> dict:
        return {
            "config": {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self.config).items()},
            "summary": [dataclasses.asdict(s) for s in self.summaries.values()],
            "gain_percent": self.gain,
            "trials": [t.to_dict() for t in self.trials],
        }


def trial_data(config: BenchConfig, seed: int, source: Dataset | None = None) -> tuple[Dataset, Dataset]:
    """(train, test) for one seed; identical for every method."""
    data_rng = make_rng(stage_seed(seed, _DATA))
    split_rng = make_rng(stage_seed(seed, _SPLIT))
    if config.protocol == "synth":
        sd = synth_generate(default_synth_spec(dominant=config.synth_dominant), 3000, 1000, data_rng)
        return sd.train, sd.test
    if source is None:
        # synthetic stream of one 4000-sample block
        sd = synth_generate(shift_synth_spec(dominant=config.synth_dominant), 4000, 0, data_rng)
        source = sd.full
    split = shift_split(source, split_rng) if config.protocol == "shift" else holdout_split(source, split_rng)
    return split.train, split.test


def run_trial(train: Dataset, test: Dataset, method: str, seed: int, config: BenchConfig = BenchConfig(),
              em_config: EmConfig = EmConfig(), adapt_config: AdaptConfig = AdaptConfig(),
              recipe: TrainRecipe = TrainRecipe()) -> TrialReport:
    """Fit ``method`` on ``train`` and evaluate it prequentially on ``test``.

    Failures are returned as a failed TrialReport instead of raised.
    """
    fit_seed = stage_seed(seed, _FIT)
    try:
        if method == PIPELINE:
            t0 = time.perf_counter()
            model, report = select_k(train, em_config, seed=fit_seed, candidates=config.candidates)
            t1 = time.perf_counter()
            res = run_adaptation(model, test.x, test.y, adapt_config)
            t2 = time.perf_counter()
            return TrialReport(method, seed, res.cumulative_loss, report.chosen_K, t1 - t0, t2 - t1,
                               losses=res.losses, predictions=res.predictions, targets=test.y)
        if method in (OFFLINE_M, OGD_M):
            t0 = time.perf_counter()
            rng = make_rng(fit_seed)
            if method == OFFLINE_M:
                res = offline_run(train, test, rng, BaselineConfig(recipe=recipe))
            else:
                res = ogd_run(train, test, BaselineConfig(kind=OGD, ogd_lr=config.ogd_lr, recipe=recipe), rng)
            # fit and stream are not timed separately for the baselines
            return TrialReport(method, seed, res.cumulative_loss, None, time.perf_counter() - t0, 0.0,
                               losses=res.losses, predictions=res.predictions, targets=test.y)
        raise ValueError(f"unknown method {method!r}")
    except Exception as exc:  # a failed trial is data, not a crash
        log.warning("trial %s seed %d failed: %s", method, seed, exc)
        return TrialReport(method, seed, math.nan, failed=True,
                           error=f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}")


def aggregate(trials: list[TrialReport], methods) -> tuple[dict[str, MethodSummary], float | None]:
    summaries = {}
    for m in methods:
        ok = [t.cumulative_loss for t in trials if t.method == m and not t.failed]
        n_failed = sum(1 for t in trials if t.method == m and t.failed)
        mean = float(np.mean(ok)) if ok else math.nan
        std = float(np.std(ok, ddof=1)) if len(ok) > 1 else (0.0 if ok else math.nan)
        summaries[m] = MethodSummary(m, mean, std, len(ok), n_failed)
    gain = None
    baselines = [s.mean for k, s in summaries.items() if k != PIPELINE and math.isfinite(s.mean)]
    if PIPELINE in summaries and baselines and math.isfinite(summaries[PIPELINE].mean):
        gain = gain_percent(summaries[PIPELINE].mean, min(baselines))
    return summaries, gain


def run_benchmark(config: BenchConfig, em_config: EmConfig = EmConfig(),
                  adapt_config: AdaptConfig = AdaptConfig(), recipe: TrainRecipe = TrainRecipe(),
                  write: bool = True) -> BenchmarkReport:
    source = load_csv(config.data, config.target) if config.data else None
    trials = []
    for i in range(config.trials):
        seed = config.seed + i
        train, test = trial_data(config, seed, source)
        for method in config.methods:
            rep = run_trial(train, test, method, seed, config, em_config, adapt_config, recipe)
            log.info(json.dumps({"event": "trial", **rep.to_dict()}))
            trials.append(rep)
    summaries, gain = aggregate(trials, config.methods)
    report = BenchmarkReport(config, trials, summaries, gain)
    if write:
        emit_report(report, config.out, trace=config.trace)
    return report


def _fmt(v) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def emit_report(report: BenchmarkReport, out_dir, trace: bool = False) -> dict[str, Path]:
    """Write summary.csv, trials.json and, if asked, one trace CSV per trial."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"summary": out / "summary.csv", "trials": out / "trials.json"}
    with paths["summary"].open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for s in report.summaries.values():
            gain = report.gain if s.method == PIPELINE else None
            w.writerow([s.method, _fmt(s.mean), _fmt(s.std), _fmt(gain), s.trials])
    paths["trials"].write_text(json.dumps(report.to_dict(), indent=2))
    if trace:
        tdir = out / "traces"
        tdir.mkdir(exist_ok=True)
        for t in report.trials:
            if t.failed or t.losses is None:
                continue
            p = tdir / f"{t.method}_seed{t.seed}.csv"
            write_trace(p, t.targets, t.predictions, t.losses)
            paths[p.stem] = p
    return paths
