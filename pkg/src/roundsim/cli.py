"""Command-line entry point: run, validate, and sweep subcommands.

One binary serves both execution modes; concrete-mode role, leader address,
and port are ordinary flags, so the same invocation works on every host of
a distributed run.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import engine
from .config import (ConfigError, apply_override, parse_experiment_doc,
                     parse_override_value)

OUTPUT_ENV = "QUANTAS2_OUTPUT"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roundsim",
        description="Round-based distributed algorithm simulator "
                    "(abstract rounds or socket-connected processes)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment JSON document")
        p.add_argument("--override", action="append", default=[], metavar="K=V",
                       help="dotted-path config override, repeatable")
        p.add_argument("--mode", choices=["abstract", "concrete"])
        p.add_argument("--role", choices=["leader", "follower"])
        p.add_argument("--leader", metavar="HOST:PORT",
                       help="leader address for concrete mode")
        p.add_argument("--port", type=int, help="leader TCP port")
        p.add_argument("--workers", type=int, help="worker pool size")
        p.add_argument("--log-level", dest="log_level",
                       choices=["error", "warning", "info", "debug", "trace"])
        p.add_argument("--output", help="output directory")

    run_p = sub.add_parser("run", help="execute one experiment")
    common(run_p)

    val_p = sub.add_parser("validate", help="parse a config and print its normal form")
    common(val_p)

    sweep_p = sub.add_parser("sweep", help="run a list of experiment points")
    common(sweep_p)
    return parser


def _load_doc(path: str) -> tuple[dict, str]:
    p = Path(path)
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}")
    return doc, str(p.parent)


def _apply_flags(doc: dict, args) -> None:
    for item in args.override:
        if "=" not in item:
            raise ConfigError(f"--override expects K=V, got {item!r}")
        key, _, raw = item.partition("=")
        apply_override(doc, key, parse_override_value(raw))
    if args.mode:
        doc["mode"] = args.mode
    if args.role or args.leader or args.port:
        doc["mode"] = "concrete"
        concrete = doc.setdefault("concrete", {})
        if args.role:
            concrete["role"] = args.role
        if args.leader:
            host, _, port = args.leader.rpartition(":")
            if not host:
                raise ConfigError("--leader expects HOST:PORT")
            concrete["leaderAddress"] = host
            concrete["leaderPort"] = int(port)
        if args.port:
            concrete["leaderPort"] = args.port
    if args.log_level:
        doc["logLevel"] = args.log_level
    if args.output:
        doc["outputDir"] = args.output
    elif "outputDir" not in doc and os.environ.get(OUTPUT_ENV):
        doc["outputDir"] = os.environ[OUTPUT_ENV]


def cmd_validate(args) -> int:
    doc, base = _load_doc(args.config)
    _apply_flags(doc, args)
    cfg = parse_experiment_doc(doc, base_dir=base)
    print(cfg.to_json(indent=2))
    return 0


def cmd_run(args) -> int:
    doc, base = _load_doc(args.config)
    _apply_flags(doc, args)
    cfg = parse_experiment_doc(doc, base_dir=base)
    summary = engine.run_experiment(cfg, workers=args.workers)
    failed = [t.test_index for t in summary.tests if t.error]
    print(json.dumps({"outputDir": cfg.output_dir,
                      "tests": len(summary.tests),
                      "failedTests": failed,
                      "aggregate": summary.aggregate}, indent=2))
    return 1 if failed else 0


def cmd_sweep(args) -> int:
    doc, base = _load_doc(args.config)
    root = args.output or (doc.get("outputDir") if isinstance(doc, dict) else None) \
        or os.environ.get(OUTPUT_ENV) or "sweep"
    points = _sweep_points(doc)
    status = 0
    for label, point_doc in points:
        point_doc.setdefault("outputDir", str(Path(root) / label))
        point_args = argparse.Namespace(**vars(args))
        point_args.output = None
        _apply_flags(point_doc, point_args)
        point_doc["outputDir"] = str(Path(root) / label)
        cfg = parse_experiment_doc(point_doc, base_dir=base)
        summary = engine.run_experiment(cfg, workers=args.workers)
        failed = [t.test_index for t in summary.tests if t.error]
        print(f"{label}: {len(summary.tests)} tests"
              + (f", failed {failed}" if failed else ""))
        if failed:
            status = 1
    return status


def _sweep_points(doc) -> list[tuple[str, dict]]:
    if isinstance(doc, list):
        return [(f"point_{i:03d}", dict(d)) for i, d in enumerate(doc)]
    if not isinstance(doc, dict) or "points" not in doc:
        raise ConfigError("sweep config must be a list of documents or "
                          "{base, points: [{label, overrides}]}")
    base_doc = doc.get("base", {})
    points = []
    for i, point in enumerate(doc["points"]):
        label = point.get("label", f"point_{i:03d}")
        merged = json.loads(json.dumps(base_doc))
        for key, value in point.get("overrides", {}).items():
            apply_override(merged, key, value)
        points.append((label, merged))
    return points


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"run": cmd_run, "validate": cmd_validate, "sweep": cmd_sweep}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
