"""Per-round metric records and their CSV / JSON artifacts.

The CSV holds only quantities that are a pure function of the run inputs, so
two runs with the same config produce identical bytes. Wall-clock time goes to
the JSON summary.
"""

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from fedspace.core.errors import SchemaError

logger = logging.getLogger(__name__)

METRICS_COLUMNS = ("round", "acc", "ce", "lp", "lr", "clients", "tasks", "samples")


@dataclass
class RoundLog:
    """What happened in one round.

    Attributes:
        round_index: 1-based round
        clients: Selected client ids, ascending
        tasks: Stage index of each selected client (aligned with ``clients``)
        samples: Stage sample count of each selected client
        ce: Mean cross-entropy over clients that trained
        lp: Mean prototype loss
        lr: Mean representation loss
        acc: Global Top-1 accuracy, when evaluated this round
        task_acc: Top-1 accuracy restricted to each task's classes, when evaluated
        wall_time: Seconds spent in the round
    """

    round_index: int
    clients: list[int]
    tasks: list[int]
    samples: list[int]
    ce: float = 0.0
    lp: float = 0.0
    lr: float = 0.0
    acc: float | None = None
    task_acc: dict[int, float] | None = None
    wall_time: float = 0.0


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def _ids(values: list[int]) -> str:
    return ";".join(str(v) for v in values)


def average_forgetting(logs: list[RoundLog]) -> float | None:
    """Mean over tasks of (best task accuracy seen) - (final task accuracy)."""
    evaluated = [log.task_acc for log in logs if log.task_acc]
    if not evaluated:
        return None
    final = evaluated[-1]
    drops = [max(ev.get(task, 0.0) for ev in evaluated) - acc for task, acc in final.items()]
    return sum(drops) / len(drops) if drops else None


def summarize(logs: list[RoundLog], config_echo: dict[str, Any] | None = None) -> dict[str, Any]:
    """JSON summary: final / best accuracy, per-task accuracy, forgetting, wall time."""
    accs = [log.acc for log in logs if log.acc is not None]
    final_tasks = next((log.task_acc for log in reversed(logs) if log.task_acc), None)
    return {
        "final_acc": accs[-1] if accs else None,
        "best_acc": max(accs) if accs else None,
        "num_evaluations": len(accs),
        "final_task_acc": {str(k): v for k, v in sorted(final_tasks.items())} if final_tasks else {},
        "forgetting": average_forgetting(logs),
        "rounds": len(logs),
        "wall_time": sum(log.wall_time for log in logs),
        "config": config_echo or {},
    }


def emit_metrics(logs: list[RoundLog], directory: Path, config_echo: dict[str, Any] | None = None) -> Path:
    """Write ``metrics.csv`` (one row per round) and ``summary.json``.

    Returns:
        Path of the CSV file
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / "metrics.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for log in logs:
            writer.writerow(
                [
                    log.round_index,
                    _fmt(log.acc),
                    _fmt(log.ce),
                    _fmt(log.lp),
                    _fmt(log.lr),
                    _ids(log.clients),
                    _ids(log.tasks),
                    _ids(log.samples),
                ]
            )
    with open(directory / "summary.json", "w", encoding="utf-8") as f:
        json.dump(summarize(logs, config_echo), f, indent=2, sort_keys=True)
    logger.info("Wrote %d metric rows to %s", len(logs), csv_path)
    return csv_path


def _parse_ids(text: str) -> list[int]:
    return [int(v) for v in text.split(";")] if text else []


def load_metrics(path: Path) -> list[RoundLog]:
    """Read a ``metrics.csv`` back into RoundLogs (without wall time or task accuracy).

    Raises:
        SchemaError: If the header does not match
    """
    with open(Path(path), encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != METRICS_COLUMNS:
            raise SchemaError(f"{path}: expected columns {','.join(METRICS_COLUMNS)}")
        return [
            RoundLog(
                round_index=int(row[0]),
                acc=float(row[1]) if row[1] else None,
                ce=float(row[2]),
                lp=float(row[3]),
                lr=float(row[4]),
                clients=_parse_ids(row[5]),
                tasks=_parse_ids(row[6]),
                samples=_parse_ids(row[7]),
            )
            for row in reader
        ]
