"""Command-line entry point: ``compshift {decompose,adapt,bench,synth}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .adapt import run_adaptation, write_trace
from .bench import METHODS, PROTOCOLS, ConfigError, parse_config, run_benchmark
from .data import NormStats, default_synth_spec, load_csv, synth_generate, write_csv
from .decompose import EmConfig
from .mixture import load_model, save_model
from .numeric import make_rng
from .select_k import select_k


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_decompose(args) -> int:
    data = load_csv(args.data, args.target)
    model, report = select_k(data, EmConfig(), seed=args.seed)
    out = _out_dir(args.out)
    save_model(model, out / "model.json", {"norm_stats": data.stats.to_dict(),
                                           "feature_names": list(data.feature_names)})
    report.save(out / "k_selection.json")
    print(f"chosen K = {report.chosen_K}, xi = {report.xi:.6g}; wrote {out / 'model.json'}")
    return 0


def cmd_adapt(args) -> int:
    model, payload = load_model(args.model)
    stats = NormStats.from_dict(payload["norm_stats"]) if "norm_stats" in payload else None
    stream = load_csv(args.data, args.target, stats=stats)
    res = run_adaptation(model, stream.x, stream.y)
    out = _out_dir(args.out)
    write_trace(out / "adapt_trace.csv", stream.y, res.predictions, res.losses, res.top_learner)
    (out / "adapt_summary.json").write_text(json.dumps({"cumulative_loss": res.cumulative_loss,
                                                        "T": len(stream)}))
    print(f"cumulative loss = {res.cumulative_loss:.6g} over {len(stream)} steps")
    return 0


def cmd_bench(args) -> int:
    text = Path(args.config).read_text() if args.config else ""
    overrides = {"data": args.data, "target": args.target, "protocol": args.protocol,
                 "methods": args.methods, "trials": args.trials, "seed": args.seed, "out": args.out}
    config = parse_config(text, overrides)
    report = run_benchmark(config)
    for s in report.summaries.values():
        print(f"{s.method:>9s}  mean {s.mean:.6g}  std {s.std:.6g}  trials {s.trials}  failed {s.failed}")
    if report.gain is not None:
        print(f"gain vs best baseline: {report.gain:+.2f}%")
    return 0


def cmd_synth(args) -> int:
    spec = default_synth_spec(args.N, args.T)
    sd = synth_generate(spec, args.N, args.T, make_rng(args.seed))
    out = _out_dir(args.out)
    write_csv(out / "train.csv", sd.train.raw_x(), sd.train.raw_y(), target=args.target)
    write_csv(out / "test.csv", sd.test.raw_x(), sd.test.raw_y(), target=args.target)
    sd.truth.save(out / "truth.json")
    print(f"wrote {args.N} training and {args.T} test samples to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="compshift", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress as JSON lines")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("decompose", help="select K and fit the decomposition on a CSV")
    d.add_argument("--data", required=True)
    d.add_argument("--target", required=True)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", default="decompose_out")
    d.set_defaults(func=cmd_decompose)

    a = sub.add_parser("adapt", help="adapt a saved model over a CSV stream")
    a.add_argument("--model", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--target", required=True)
    a.add_argument("--out", default="adapt_out")
    a.set_defaults(func=cmd_adapt)

    b = sub.add_parser("bench", help="run paired multi-seed trials")
    b.add_argument("--config", help="flat key = value file; flags override it")
    b.add_argument("--data")
    b.add_argument("--target")
    b.add_argument("--protocol", choices=PROTOCOLS)
    b.add_argument("--methods", help=f"comma-separated subset of {','.join(METHODS)}")
    b.add_argument("--trials", type=int, default=None, help="default 30")
    b.add_argument("--seed", type=int)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("synth", help="write a synthetic dataset and its ground truth")
    s.add_argument("--N", type=int, default=3000)
    s.add_argument("--T", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--target", default="y")
    s.add_argument("--out", default="synth_out")
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
