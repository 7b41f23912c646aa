"""Tests for metric artifacts (fedspace/federated/metrics.py)."""

import json

import pytest

from fedspace.core.errors import SchemaError
from fedspace.federated.metrics import (
    METRICS_COLUMNS,
    RoundLog,
    average_forgetting,
    emit_metrics,
    load_metrics,
    summarize,
)


def _logs() -> list[RoundLog]:
    return [
        RoundLog(1, [0, 2], [0, 1], [40, 12], ce=1.25, lp=0.0, lr=0.1, wall_time=0.5),
        RoundLog(2, [1, 2], [0, 1], [30, 12], ce=0.9, lp=0.3, lr=0.05, acc=0.5, task_acc={0: 0.8, 1: 0.2}, wall_time=0.25),
        RoundLog(3, [0, 1], [1, 1], [0, 33], ce=0.7, lp=0.2, lr=0.04, acc=0.625, task_acc={0: 0.6, 1: 0.65}),
    ]


class TestEmitMetrics:
    """Test CSV and JSON output."""

    def test_header_only_for_empty_logs(self, tmp_path):
        """Test no rounds gives just the header."""
        path = emit_metrics([], tmp_path)

        assert path.read_text() == "round,acc,ce,lp,lr,clients,tasks,samples\n"

    def test_fixed_column_order(self):
        """Test the column contract."""
        assert METRICS_COLUMNS == ("round", "acc", "ce", "lp", "lr", "clients", "tasks", "samples")

    def test_row_format(self, tmp_path):
        """Test ids are ;-joined and missing accuracy is blank."""
        path = emit_metrics(_logs()[:1], tmp_path)

        assert path.read_text().splitlines()[1] == "1,,1.25,0.0,0.1,0;2,0;1,40;12"

    def test_csv_roundtrip(self, tmp_path):
        """Test parsing the CSV reproduces the logged values."""
        logs = _logs()

        loaded = load_metrics(emit_metrics(logs, tmp_path))

        for a, b in zip(logs, loaded):
            assert (a.round_index, a.acc, a.ce, a.lp, a.lr) == (b.round_index, b.acc, b.ce, b.lp, b.lr)
            assert (a.clients, a.tasks, a.samples) == (b.clients, b.tasks, b.samples)

    def test_csv_excludes_wall_time(self, tmp_path):
        """Test identical logs with different timings give identical bytes."""
        slow = _logs()
        for log in slow:
            log.wall_time += 10.0

        a = emit_metrics(_logs(), tmp_path / "a").read_bytes()
        b = emit_metrics(slow, tmp_path / "b").read_bytes()

        assert a == b

    def test_summary_file(self, tmp_path):
        """Test summary.json carries accuracy, forgetting and the config echo."""
        emit_metrics(_logs(), tmp_path, {"method": "fedspace"})

        summary = json.loads((tmp_path / "summary.json").read_text())

        assert summary["final_acc"] == 0.625
        assert summary["best_acc"] == 0.625
        assert summary["num_evaluations"] == 2
        assert summary["final_task_acc"] == {"0": 0.6, "1": 0.65}
        assert summary["config"] == {"method": "fedspace"}
        assert summary["wall_time"] == pytest.approx(0.75)

    def test_header_mismatch(self, tmp_path):
        """Test foreign CSVs raise SchemaError."""
        path = tmp_path / "metrics.csv"
        path.write_text("round,accuracy\n1,0.5\n")

        with pytest.raises(SchemaError):
            load_metrics(path)


class TestForgetting:
    """Test average forgetting."""

    def test_drop_from_best(self):
        """Test mean over tasks of best minus final accuracy."""
        assert average_forgetting(_logs()) == pytest.approx(((0.8 - 0.6) + 0.0) / 2)

    def test_no_evaluations(self):
        """Test no evaluated rounds gives None."""
        assert average_forgetting([RoundLog(1, [0], [0], [1])]) is None

    def test_summary_without_evaluations(self):
        """Test the summary of unevaluated rounds."""
        summary = summarize([RoundLog(1, [0], [0], [1])])

        assert summary["final_acc"] is None
        assert summary["forgetting"] is None
        assert summary["rounds"] == 1
