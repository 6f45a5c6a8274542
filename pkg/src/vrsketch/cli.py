"""Command-line entry points.

Exit codes: 0 success, 1 validation error (config, manifest, arguments),
2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from . import pipeline
from .config import PRESETS, load_config
from .dataset import ManifestError, draw_heldout_participants, load_manifest, make_splits, write_manifest
from .encoders import CheckpointError
from .retrieval import format_report, report_csv
from .utils import ConfigError

logger = logging.getLogger("vrsketch")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _config(args):
    overrides = list(args.set or [])
    if getattr(args, "deterministic", False):
        overrides.append("train.deterministic=true")
    if getattr(args, "seed", None):
        overrides.append(f"train.seeds={json.dumps(args.seed)}")
    if getattr(args, "manifest", None):
        overrides.append({"dataset": {"manifest": str(Path(args.manifest).resolve())}})
    if getattr(args, "cache_dir", None):
        overrides.append({"dataset": {"cache_dir": str(Path(args.cache_dir).resolve())}})
    return load_config(args.config, args.preset, overrides)


def cmd_prepare(args) -> int:
    snapshot = load_manifest(args.manifest)
    cache = pipeline.CloudCache(args.cache_dir, args.n_points, args.aligned)
    errors = pipeline.prepare(snapshot, cache)
    print(f"prepared {len(snapshot.records)} record(s), computed {cache.computed} cloud(s) "
          f"into {cache.root}")
    if errors:
        print("errors:", *errors, sep="\n  ", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_split(args) -> int:
    snapshot = load_manifest(args.manifest)
    heldout = args.heldout.split(",") if args.heldout else draw_heldout_participants(
        snapshot.records, args.heldout_count, seed=args.seed or 0)
    ratios = tuple(float(x) for x in args.ratios.split(":"))
    out = make_splits(snapshot.records, heldout, ratios, seed=args.seed or 0)
    write_manifest(args.out, out.records)
    print(json.dumps({"heldout": list(out.heldout_participants), "counts": out.counts()}))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    if args.explain:
        print(f"# {cfg.description}" if cfg.description else "", cfg.dump(), sep="\n")
        return EXIT_OK
    out = Path(args.out or Path("runs") / cfg.experiment_name)
    runs = pipeline.run_experiment(cfg, out)
    best = pipeline.best_of_runs(out)
    (out / "best.json").write_text(json.dumps(best, indent=2), encoding="utf-8")
    print(json.dumps({"runs": len(runs), "best": best}, indent=2))
    return EXIT_OK


def cmd_eval(args) -> int:
    snapshot = load_manifest(args.manifest)
    cache = pipeline.CloudCache(args.cache_dir, args.n_points, args.aligned)
    ev = pipeline.evaluate(args.checkpoint, snapshot, cache, args.gallery_index)
    print(f"checkpoint {ev.checkpoint} (model {ev.fingerprint})")
    for note in ev.notes:
        print(f"note: {note}")
    print(format_report(ev.report))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(json.dumps(ev.to_dict(), indent=2), encoding="utf-8")
        (out / "report.csv").write_text(report_csv(ev.report), encoding="utf-8")
        (out / "report.txt").write_text(format_report(ev.report) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_report(args) -> int:
    best = pipeline.best_of_runs(args.runs_dir)
    cfg_file = Path(args.runs_dir) / "config.yaml"
    if cfg_file.exists():
        best["config"] = yaml.safe_load(cfg_file.read_text(encoding="utf-8"))
    print(json.dumps(best, indent=2))
    return EXIT_OK


def cmd_size_sweep(args) -> int:
    cfg = _config(args)
    fractions = [float(f) for f in args.fractions.split(",")]
    rows = pipeline.size_sweep(cfg, fractions, args.out, draws=args.draws)
    print(json.dumps({str(k): v for k, v in pipeline.summarize_sweep(rows).items()}, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vrsketch", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def data_args(p, manifest_required=True):
        p.add_argument("--manifest", required=manifest_required)
        p.add_argument("--cache-dir", help=f"cloud cache root (default ${pipeline.CACHE_ENV})")

    def run_args(p):
        p.add_argument("--config", help="YAML run config")
        p.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--seed", type=int, action="append", help="repeatable; replaces train.seeds")
        p.add_argument("--deterministic", action="store_true")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
        p.add_argument("--out")
        data_args(p, manifest_required=False)

    p = sub.add_parser("prepare", help="sample and cache normalized clouds")
    data_args(p)
    p.add_argument("--n-points", type=int, default=1024)
    p.add_argument("--aligned", action="store_true")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("split", help="assign train/val/test and write a new manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--heldout", help="comma-separated participant ids")
    p.add_argument("--heldout-count", type=int, default=5)
    p.add_argument("--ratios", default="7:1:2")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train all seeds of an experiment")
    run_args(p)
    p.add_argument("--explain", action="store_true", help="print the resolved config and exit")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    data_args(p)
    p.add_argument("--gallery-index", help="index file to reuse or create")
    p.add_argument("--n-points", type=int, default=1024)
    p.add_argument("--aligned", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="best-of-runs selection for a runs directory")
    p.add_argument("runs_dir")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("size-sweep", help="accuracy against training-set fraction")
    run_args(p)
    p.add_argument("--fractions", default="0.2,0.4,0.6,0.8,1.0")
    p.add_argument("--draws", type=int, default=3)
    p.set_defaults(func=cmd_size_sweep, out="size_sweep")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ManifestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (CheckpointError, RuntimeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
