import csv
import json

import pytest

from conftest import make_point

from sim_analysis import (AnalysisError, aggregate, verify_against_summaries,
                          write_csv)


def test_means_recomputed_from_logs(synthetic_sweep):
    table = aggregate(str(synthetic_sweep))
    assert table.value("a", "utility") == 99.0
    assert table.value("b", "utility") == 95.0
    row = table.metrics_for("a")["utility"]
    assert row.test_count == 2
    assert row.stddev == 1.0


def test_logs_beat_summary_aggregates(synthetic_sweep):
    # Corrupt the summary aggregate: the table must reflect the raw logs.
    summary_path = synthetic_sweep / "a" / "summary.json"
    doc = json.loads(summary_path.read_text())
    doc["aggregate"]["utility"]["mean"] = 1.0
    summary_path.write_text(json.dumps(doc))
    table = aggregate(str(synthetic_sweep))
    assert table.value("a", "utility") == 99.0
    with pytest.raises(AnalysisError):
        verify_against_summaries(table)


def test_consistency_check_passes_on_honest_tree(synthetic_sweep):
    table = aggregate(str(synthetic_sweep))
    verify_against_summaries(table)


def test_aggregation_is_pure(synthetic_sweep):
    first = aggregate(str(synthetic_sweep))
    second = aggregate(str(synthetic_sweep))
    assert first.rows == second.rows


def test_wall_clock_rows_come_from_summary_tests(synthetic_sweep):
    table = aggregate(str(synthetic_sweep))
    row = table.metrics_for("a")["wallClock"]
    assert row.test_count == 2
    assert row.mean == pytest.approx((0.25 + 0.26) / 2)


def test_malformed_log_skipped_with_warning(synthetic_sweep, capsys):
    (synthetic_sweep / "a" / "test_1.jsonl").write_text("{not json\n")
    table = aggregate(str(synthetic_sweep))
    assert table.metrics_for("a")["utility"].test_count == 1
    assert "malformed" in capsys.readouterr().err


def test_empty_root_warns_and_returns_empty(tmp_path, capsys):
    table = aggregate(str(tmp_path / "nothing"))
    assert table.rows == []
    assert "warning" in capsys.readouterr().err


def test_single_point_root_is_accepted(tmp_path):
    make_point(tmp_path / "solo", "solo", {"algorithm": "abp"},
               [{"utility": 50.0}])
    table = aggregate(str(tmp_path / "solo" / "solo"))
    assert table.value("solo", "utility") == 50.0


def test_missing_metric_error_names_it(synthetic_sweep):
    table = aggregate(str(synthetic_sweep))
    with pytest.raises(AnalysisError, match="latency"):
        table.value("a", "latency")


def test_csv_round_trip(synthetic_sweep, tmp_path):
    table = aggregate(str(synthetic_sweep))
    out = tmp_path / "table.csv"
    write_csv(table, str(out))
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert {r["point"] for r in rows} == {"a", "b"}
    util_a = next(r for r in rows if r["point"] == "a" and r["metric"] == "utility")
    assert float(util_a["mean"]) == 99.0
    assert util_a["testCount"] == "2"
