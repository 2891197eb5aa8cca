"""Regenerate the experiment figures from aggregated sweep tables.

Each figure kind knows which config fields label its series and which
metrics it needs; a missing metric raises naming it, and an empty table
never produces a file.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .aggregate import AnalysisError, SweepTable

FIGURE_KINDS = ("parasiteSweep", "pbftByzantine", "raftCrash",
                "abpUtility", "sdlUtility", "dhtScale")


def plot_figure(kind: str, table: SweepTable, out_path: str) -> str:
    if kind not in FIGURE_KINDS:
        raise AnalysisError(f"unknown figure kind {kind!r}; expected {FIGURE_KINDS}")
    if not table.rows:
        raise AnalysisError("empty table: nothing to plot")
    fig = _RENDERERS[kind](table)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return out_path


def _config(table: SweepTable, point: str) -> dict[str, Any]:
    return table.configs.get(point, {})


def _fault_count(config: dict[str, Any]) -> int:
    total = 0
    for fault in config.get("faults", []):
        peers = fault.get("peers")
        if isinstance(peers, dict):
            total += peers.get("count", 0)
        elif isinstance(peers, list):
            total += len(peers)
    return total


def _errorbar(ax, xs, means, sds, label):
    ax.errorbar(xs, means, yerr=sds, marker="o", capsize=3, label=label)


def _parasite_sweep(table: SweepTable):
    groups: dict[tuple[str, int], list[tuple[int, float, float]]] = {}
    for point in table.points():
        cfg = _config(table, point)
        params = cfg.get("algoParams", {})
        rates = params.get("miningRates", [1])
        strength = int(max(rates))
        lead = params.get("leadThreshold", 1)
        row = table.metrics_for(point).get("parasiteShare")
        if row is None:
            raise AnalysisError(f"point {point!r} is missing metric 'parasiteShare'")
        groups.setdefault((cfg.get("algorithm", "?"), lead), []).append(
            (strength, row.mean, row.stddev))

    strengths = sorted({s for series in groups.values() for s, _, _ in series})
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.8 / max(len(groups), 1)
    for offset, (key, series) in enumerate(sorted(groups.items())):
        algorithm, lead = key
        by_strength = {s: (m, sd) for s, m, sd in series}
        xs = [strengths.index(s) + offset * width for s in strengths
              if s in by_strength]
        means = [by_strength[s][0] for s in strengths if s in by_strength]
        sds = [by_strength[s][1] for s in strengths if s in by_strength]
        ax.bar(xs, means, width=width, yerr=sds, capsize=3,
               label=f"{algorithm}, lead {lead}")
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(strengths))])
    ax.set_xticklabels([f"rate {s}" for s in strengths])
    ax.set_ylabel("parasite share of adopted chain")
    ax.set_xlabel("coalition strength")
    ax.legend()
    ax.set_title("Parasite-chain attack")
    return fig


def _pbft_byzantine(table: SweepTable):
    points = []
    for point in table.points():
        metrics = table.metrics_for(point)
        for name in ("throughput", "latency"):
            if name not in metrics:
                raise AnalysisError(f"point {point!r} is missing metric {name!r}")
        points.append((_fault_count(_config(table, point)),
                       metrics["throughput"], metrics["latency"]))
    points.sort(key=lambda p: p[0])
    xs = [p[0] for p in points]
    fig, ax = plt.subplots(figsize=(7, 4))
    _errorbar(ax, xs, [p[1].mean for p in points], [p[1].stddev for p in points],
              "throughput (committed values)")
    ax.set_xlabel("equivocating replicas")
    ax.set_ylabel("committed values")
    twin = ax.twinx()
    twin.errorbar(xs, [p[2].mean for p in points], yerr=[p[2].stddev for p in points],
                  marker="s", capsize=3, color="tab:red", label="latency (rounds)")
    twin.set_ylabel("mean commit latency (rounds)")
    lines, labels = ax.get_legend_handles_labels()
    lines2, labels2 = twin.get_legend_handles_labels()
    ax.legend(lines + lines2, labels + labels2, loc="center left")
    ax.set_title("PBFT under equivocation")
    return fig


def _raft_crash(table: SweepTable):
    points = []
    for point in table.points():
        metrics = table.metrics_for(point)
        if "committed" not in metrics:
            raise AnalysisError(f"point {point!r} is missing metric 'committed'")
        points.append((_fault_count(_config(table, point)), metrics["committed"]))
    points.sort(key=lambda p: p[0])
    fig, ax = plt.subplots(figsize=(7, 4))
    _errorbar(ax, [p[0] for p in points], [p[1].mean for p in points],
              [p[1].stddev for p in points], "committed values")
    ax.set_xlabel("crashed replicas")
    ax.set_ylabel("committed values")
    ax.legend()
    ax.set_title("Raft under crash faults")
    return fig


def _abp_utility(table: SweepTable):
    series: dict[str, list[tuple[int, float, float]]] = {}
    for point in table.points():
        cfg = _config(table, point)
        params = cfg.get("algoParams", {})
        level = params.get("adversityLevel")
        if level is None:
            continue
        metrics = table.metrics_for(point)
        if "utility" not in metrics:
            raise AnalysisError(f"point {point!r} is missing metric 'utility'")
        row = metrics["utility"]
        series.setdefault(params.get("series", "delay"), []).append(
            (level, row.mean, row.stddev))
    if not series:
        raise AnalysisError("no adversity-level points found for abpUtility")
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, values in sorted(series.items()):
        values.sort()
        _errorbar(ax, [v[0] for v in values], [v[1] for v in values],
                  [v[2] for v in values], f"{name} series")
    ax.set_xlabel("adversity level")
    ax.set_ylabel("utility (%)")
    ax.set_ylim(0, 105)
    ax.legend()
    ax.set_title("Alternating-bit utility")
    return fig


def _sdl_utility(table: SweepTable):
    bars = []
    for point in table.points():
        params = _config(table, point).get("algoParams", {})
        mix = params.get("faultMix")
        if mix is None:
            continue
        metrics = table.metrics_for(point)
        if "utility" not in metrics:
            raise AnalysisError(f"point {point!r} is missing metric 'utility'")
        bars.append((mix, metrics["utility"]))
    if not bars:
        raise AnalysisError("no faultMix points found for sdlUtility")
    order = {"none": 0, "reorder": 1, "duplicate": 2, "drop": 3, "mixed": 4}
    bars.sort(key=lambda b: order.get(b[0], 99))
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar([b[0] for b in bars], [b[1].mean for b in bars],
           yerr=[b[1].stddev for b in bars], capsize=4)
    ax.set_ylabel("utility (%)")
    ax.set_xlabel("channel fault type")
    ax.set_title("Stabilizing data link utility")
    return fig


def _dht_scale(table: SweepTable):
    series: dict[tuple[str, str], list[tuple[int, float]]] = {}
    for point in table.points():
        cfg = _config(table, point)
        metrics = table.metrics_for(point)
        if "wallClock" not in metrics:
            raise AnalysisError(f"point {point!r} is missing metric 'wallClock'")
        row = metrics["wallClock"]
        total = row.mean * row.test_count  # runtime summed over the tests
        key = (cfg.get("algorithm", "?"), cfg.get("mode", "abstract"))
        series.setdefault(key, []).append((cfg.get("peerCount", 0), total))
    fig, ax = plt.subplots(figsize=(7, 4))
    for (algorithm, mode), values in sorted(series.items()):
        values.sort()
        ax.plot([v[0] for v in values], [v[1] for v in values], marker="o",
                label=f"{algorithm} ({mode})")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("peers")
    ax.set_ylabel("summed runtime (s)")
    ax.legend()
    ax.set_title("DHT runtime at scale")
    return fig


_RENDERERS = {
    "parasiteSweep": _parasite_sweep,
    "pbftByzantine": _pbft_byzantine,
    "raftCrash": _raft_crash,
    "abpUtility": _abp_utility,
    "sdlUtility": _sdl_utility,
    "dhtScale": _dht_scale,
}
