import json
from statistics import fmean, pstdev

import pytest


def metrics_record(payload, test=0, round_no=99):
    return json.dumps({"level": "info", "tag": "metrics", "test": test,
                       "round": round_no, "payload": payload})


def make_point(root, label, config, per_test_metrics, wall_clocks=None):
    """Lay down one sweep point directory in the primary's file format."""
    point = root / label
    point.mkdir(parents=True)
    tests = []
    for index, metrics in enumerate(per_test_metrics):
        lines = [
            json.dumps({"level": "info", "tag": "test-start", "test": index,
                        "round": 0, "payload": {}}),
            metrics_record(metrics, test=index),
        ]
        (point / f"test_{index}.jsonl").write_text("\n".join(lines) + "\n")
        tests.append({
            "testIndex": index,
            "metrics": metrics,
            "wallClock": (wall_clocks or {}).get(index, 0.25 + index / 100),
            "recordCount": len(lines),
            "faults": {},
            "error": None,
        })
    keys = sorted({k for m in per_test_metrics for k in m})
    aggregate = {}
    for key in keys:
        values = [m[key] for m in per_test_metrics if key in m]
        aggregate[key] = {"mean": fmean(values),
                          "stddev": pstdev(values) if len(values) > 1 else 0.0,
                          "count": float(len(values))}
    summary = {"config": config, "host": {"hostName": "synthetic"},
               "workers": 1, "tests": tests, "aggregate": aggregate,
               "logWriteFailures": 0}
    (point / "summary.json").write_text(json.dumps(summary, indent=2))
    return point


@pytest.fixture
def synthetic_sweep(tmp_path):
    root = tmp_path / "sweep"
    make_point(root, "a", {"algorithm": "abp", "peerCount": 2,
                           "algoParams": {"adversityLevel": 1, "series": "delay"}},
               [{"utility": 100.0, "sent": 100.0},
                {"utility": 98.0, "sent": 99.0}])
    make_point(root, "b", {"algorithm": "abp", "peerCount": 2,
                           "algoParams": {"adversityLevel": 2, "series": "delay"}},
               [{"utility": 96.0, "sent": 90.0},
                {"utility": 94.0, "sent": 91.0}])
    return root
