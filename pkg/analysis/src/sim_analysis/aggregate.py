"""Aggregate sweep output trees into one table.

A sweep root holds one subdirectory per point, each with a summary.json and
test_<i>.jsonl logs.  Means and standard deviations are recomputed from the
raw per-test metric records in the logs; the summary's own aggregate block
is only ever used as a cross-check.  Wall-clock values are engine-owned and
deliberately absent from the logs, so those per-test raw values come from
the summary's test list.
"""

from __future__ import annotations

import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from statistics import fmean, pstdev
from typing import Any, Optional


class AnalysisError(Exception):
    pass


@dataclass(frozen=True)
class SweepRow:
    point: str
    metric: str
    mean: float
    stddev: float
    test_count: int


@dataclass
class SweepTable:
    rows: list[SweepRow] = field(default_factory=list)
    configs: dict[str, dict[str, Any]] = field(default_factory=dict)
    summaries: dict[str, dict[str, Any]] = field(default_factory=dict)

    def value(self, point: str, metric: str) -> float:
        for row in self.rows:
            if row.point == point and row.metric == metric:
                return row.mean
        raise AnalysisError(f"point {point!r} is missing metric {metric!r}")

    def points(self) -> list[str]:
        return sorted(self.configs)

    def metrics_for(self, point: str) -> dict[str, SweepRow]:
        return {row.metric: row for row in self.rows if row.point == point}


def _warn(message: str) -> None:
    print(f"warning: {message}", file=sys.stderr)


def _metric_values(point_dir: Path) -> dict[str, list[float]]:
    values: dict[str, list[float]] = {}
    for log_path in sorted(point_dir.glob("test_*.jsonl")):
        found = None
        try:
            for line in log_path.read_text(encoding="utf-8").splitlines():
                doc = json.loads(line)
                if doc.get("tag") == "metrics":
                    found = doc.get("payload", {})
        except (OSError, json.JSONDecodeError) as exc:
            _warn(f"skipping malformed log {log_path}: {exc}")
            continue
        if found is None:
            _warn(f"{log_path} has no metrics record; skipped")
            continue
        for key, value in found.items():
            if isinstance(value, (int, float)):
                values.setdefault(key, []).append(float(value))
    return values


def _load_point(point_dir: Path, label: str, table: SweepTable) -> None:
    summary_path = point_dir / "summary.json"
    try:
        summary = json.loads(summary_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        _warn(f"skipping {point_dir}: bad summary.json: {exc}")
        return
    values = _metric_values(point_dir)
    wall = [t.get("wallClock") for t in summary.get("tests", [])
            if isinstance(t.get("wallClock"), (int, float)) and not t.get("error")]
    if wall:
        values["wallClock"] = [float(w) for w in wall]
    if not values:
        _warn(f"{point_dir} holds no per-test metric values; skipped")
        return
    table.configs[label] = summary.get("config", {})
    table.summaries[label] = summary
    for metric, series in sorted(values.items()):
        table.rows.append(SweepRow(
            point=label,
            metric=metric,
            mean=fmean(series),
            stddev=pstdev(series) if len(series) > 1 else 0.0,
            test_count=len(series),
        ))


def aggregate(output_root: str) -> SweepTable:
    """One row per (sweep point, metric); malformed files are skipped."""
    root = Path(output_root)
    table = SweepTable()
    if not root.is_dir():
        _warn(f"{root} is not a directory")
        return table
    if (root / "summary.json").exists():
        _load_point(root, root.name, table)
    for child in sorted(p for p in root.iterdir() if p.is_dir()):
        if (child / "summary.json").exists():
            _load_point(child, child.name, table)
    if not table.rows:
        _warn(f"no sweep points found under {root}")
    return table


def verify_against_summaries(table: SweepTable, rel_tol: float = 1e-9) -> None:
    """Assert recomputed means match each summary's own aggregate block."""
    for label, summary in table.summaries.items():
        aggregate_block = summary.get("aggregate", {})
        for metric, stats in aggregate_block.items():
            recomputed = table.value(label, metric)
            expected = stats["mean"]
            scale = max(abs(expected), 1e-12)
            if abs(recomputed - expected) / scale > rel_tol:
                raise AnalysisError(
                    f"{label}/{metric}: recomputed mean {recomputed} deviates "
                    f"from summary aggregate {expected}")


def write_csv(table: SweepTable, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["point", "metric", "mean", "stddev", "testCount"])
        for row in table.rows:
            writer.writerow([row.point, row.metric, repr(row.mean),
                             repr(row.stddev), row.test_count])
