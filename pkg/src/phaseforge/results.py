"""Persistence and reporting: the evaluation record store, speedup and
failure summaries, cross-application matrices, and permutation histograms.

Exports are bit-stable: keys are sorted and CSV decimals use a fixed six
fractional digits. JSON exports keep full-precision values so stores, reports,
and matrices round-trip exactly; clamping of matrix ratios to [0, 1] is a
CSV-presentation concern only.
"""

from __future__ import annotations

import csv
import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .catalog import parse_phase_order, render_phase_order
from .explorer import CellResult, CrossApplyMatrix, EvaluationRecord, RecordStatus

RECORD_COLUMNS = ("kernel_id", "eval_index", "order_text", "digest", "status", "wall_time_s")


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def geometric_mean(values: Sequence[float]) -> float:
    """exp of the mean log; requires a nonempty list of positive values."""
    if not values:
        raise ValueError("geometric mean of an empty list is undefined")
    if any(v <= 0 for v in values):
        raise ValueError("geometric mean requires positive values")
    return math.exp(math.fsum(math.log(v) for v in values) / len(values))


class ResultsStore:
    """Append-only record store with a (kernel, digest) -> first-ordinal index."""

    def __init__(self) -> None:
        self._records: list[EvaluationRecord] = []
        self._index: dict[tuple[str, str], int] = {}
        self._lock = threading.Lock()

    def append(self, record: EvaluationRecord) -> int:
        with self._lock:
            ordinal = len(self._records)
            self._records.append(record)
            if record.artifact_digest is not None:
                self._index.setdefault((record.kernel_id, record.artifact_digest), ordinal)
            return ordinal

    def extend(self, records: Iterable[EvaluationRecord]) -> None:
        for record in records:
            self.append(record)

    @property
    def records(self) -> tuple[EvaluationRecord, ...]:
        with self._lock:
            return tuple(self._records)

    def lookup(self, kernel_id: str, digest: str) -> int | None:
        with self._lock:
            return self._index.get((kernel_id, digest))

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)


def resolve_status(store: ResultsStore, record: EvaluationRecord) -> RecordStatus:
    """The record's outcome, following a reused record to the one it cites."""
    if record.status is not RecordStatus.REUSED or record.artifact_digest is None:
        return record.status
    ordinal = store.lookup(record.kernel_id, record.artifact_digest)
    if ordinal is None:
        return record.status
    cited = store.records[ordinal]
    if cited.status is RecordStatus.REUSED:
        return record.status
    return cited.status


def failure_summary(
    store: ResultsStore, kernel_filter: str | Iterable[str] | None = None
) -> dict[RecordStatus, float]:
    """Fraction of records per outcome over the filtered set; sums to 1.

    Reused records count as the outcome of the record they cite.
    """
    if kernel_filter is None:
        allowed = None
    elif isinstance(kernel_filter, str):
        allowed = {kernel_filter}
    else:
        allowed = set(kernel_filter)
    counts: dict[RecordStatus, int] = {}
    total = 0
    for record in store.records:
        if allowed is not None and record.kernel_id not in allowed:
            continue
        status = resolve_status(store, record)
        counts[status] = counts.get(status, 0) + 1
        total += 1
    if total == 0:
        return {}
    return {status: count / total for status, count in counts.items()}


@dataclass(frozen=True)
class KernelSpeedup:
    baseline_time: float
    best_time: float
    speedup: float


@dataclass(frozen=True)
class SpeedupReport:
    per_kernel: dict[str, KernelSpeedup]
    geomean: float


def build_speedup_report(kb) -> SpeedupReport:
    """Speedups (baseline over best) per kernel plus their geometric mean."""
    per_kernel = {
        kernel_id: KernelSpeedup(
            baseline_time=entry.baseline_time,
            best_time=entry.best_time,
            speedup=entry.baseline_time / entry.best_time,
        )
        for kernel_id, entry in kb.entries.items()
    }
    if not per_kernel:
        raise ValueError("cannot report speedups for an empty knowledge base")
    return SpeedupReport(
        per_kernel=per_kernel,
        geomean=geometric_mean([s.speedup for s in per_kernel.values()]),
    )


@dataclass(frozen=True)
class HistogramBucket:
    low: float
    high: float
    percent: float


@dataclass(frozen=True)
class PermutationHistogram:
    buckets: tuple[HistogramBucket, ...]
    failure_percent: float


def permutation_histogram(
    records: Sequence[EvaluationRecord], bucket_width: float
) -> PermutationHistogram:
    """Bucket each permutation's ratio time(best)/time(permutation) into [0, 1]
    bands, with non-valid results in a dedicated failure bucket. The best time
    is the fastest valid record in the group. Records must share one kernel
    and one pass multiset."""
    if not records:
        raise ValueError("permutation histogram requires at least one record")
    if not 0.0 < bucket_width <= 1.0:
        raise ValueError(f"bucket_width must lie in (0, 1], got {bucket_width}")
    kernel_ids = {r.kernel_id for r in records}
    if len(kernel_ids) > 1:
        raise ValueError(f"records span multiple kernels: {sorted(kernel_ids)}")
    multisets = {frozenset(r.order.multiset().items()) for r in records}
    if len(multisets) > 1:
        raise ValueError("records mix different pass multisets")

    n_buckets = math.ceil(1.0 / bucket_width)
    counts = [0] * n_buckets
    failures = 0
    valid_times = [r.wall_time for r in records if r.status is RecordStatus.VALID]
    best_time = min(valid_times) if valid_times else None
    for record in records:
        if record.status is not RecordStatus.VALID or best_time is None:
            failures += 1
            continue
        ratio = min(1.0, max(0.0, best_time / record.wall_time))
        counts[min(int(ratio / bucket_width), n_buckets - 1)] += 1
    total = len(records)
    buckets = tuple(
        HistogramBucket(
            low=i * bucket_width,
            high=min(1.0, (i + 1) * bucket_width),
            percent=100.0 * counts[i] / total,
        )
        for i in range(n_buckets)
    )
    return PermutationHistogram(buckets=buckets, failure_percent=100.0 * failures / total)


# -- Record export/import ----------------------------------------------------


def _record_to_row(record: EvaluationRecord) -> list[str]:
    return [
        record.kernel_id,
        str(record.eval_index),
        render_phase_order(record.order),
        record.artifact_digest or "",
        record.status.value,
        _fmt(record.wall_time) if record.wall_time is not None else "",
    ]


def _record_from_fields(
    kernel_id: str, eval_index: str, order_text: str, digest: str, status: str, wall_time: str
) -> EvaluationRecord:
    return EvaluationRecord(
        kernel_id=kernel_id,
        order=parse_phase_order(order_text),
        artifact_digest=digest or None,
        status=RecordStatus(status),
        wall_time=float(wall_time) if wall_time else None,
        eval_index=int(eval_index),
    )


def export_records_csv(records: Iterable[EvaluationRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(RECORD_COLUMNS)
        for record in records:
            writer.writerow(_record_to_row(record))


def import_records_csv(path: str | Path) -> list[EvaluationRecord]:
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != list(RECORD_COLUMNS):
            raise ValueError(f"unexpected records CSV header in {path}: {header}")
        return [_record_from_fields(*row) for row in reader]


def export_records_json(records: Iterable[EvaluationRecord], path: str | Path) -> None:
    payload = [
        {
            "kernel_id": r.kernel_id,
            "eval_index": r.eval_index,
            "order_text": render_phase_order(r.order),
            "digest": r.artifact_digest,
            "status": r.status.value,
            "wall_time_s": r.wall_time,
        }
        for r in records
    ]
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def import_records_json(path: str | Path) -> list[EvaluationRecord]:
    payload = json.loads(Path(path).read_text())
    return [
        EvaluationRecord(
            kernel_id=item["kernel_id"],
            order=parse_phase_order(item["order_text"]),
            artifact_digest=item["digest"],
            status=RecordStatus(item["status"]),
            wall_time=item["wall_time_s"],
            eval_index=item["eval_index"],
        )
        for item in payload
    ]


# -- Matrix export/import ----------------------------------------------------


def export_matrix_csv(matrix: CrossApplyMatrix, path: str | Path) -> None:
    """Rows are sequence owners, columns are kernels; cells are ratios clamped
    to [0, 1] or FAIL."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["sequence_owner", *matrix.kernel_ids])
        for owner in matrix.kernel_ids:
            row: list[str] = [owner]
            for target in matrix.kernel_ids:
                cell = matrix.cells[(owner, target)]
                if cell.failed:
                    row.append("FAIL")
                else:
                    row.append(_fmt(min(1.0, max(0.0, cell.ratio))))
            writer.writerow(row)


def export_matrix_json(matrix: CrossApplyMatrix, path: str | Path) -> None:
    payload = {
        "kernel_ids": list(matrix.kernel_ids),
        "cells": {
            f"{owner}|{target}": (None if cell.failed else cell.ratio)
            for (owner, target), cell in matrix.cells.items()
        },
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def import_matrix_json(path: str | Path) -> CrossApplyMatrix:
    payload = json.loads(Path(path).read_text())
    cells: dict[tuple[str, str], CellResult] = {}
    for key, ratio in payload["cells"].items():
        owner, target = key.split("|", 1)
        cells[(owner, target)] = CellResult(ratio=ratio, failed=ratio is None)
    return CrossApplyMatrix(kernel_ids=tuple(payload["kernel_ids"]), cells=cells)


# -- Report export/import ----------------------------------------------------


def export_report_csv(report: SpeedupReport, path: str | Path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["kernel_id", "baseline_time_s", "best_time_s", "speedup"])
        for kernel_id in sorted(report.per_kernel):
            entry = report.per_kernel[kernel_id]
            writer.writerow(
                [kernel_id, _fmt(entry.baseline_time), _fmt(entry.best_time), _fmt(entry.speedup)]
            )
        writer.writerow(["geomean", "", "", _fmt(report.geomean)])


def export_report_json(report: SpeedupReport, path: str | Path) -> None:
    payload = {
        "per_kernel": {
            kernel_id: {
                "baseline_time": entry.baseline_time,
                "best_time": entry.best_time,
                "speedup": entry.speedup,
            }
            for kernel_id, entry in report.per_kernel.items()
        },
        "geomean": report.geomean,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def import_report_json(path: str | Path) -> SpeedupReport:
    payload = json.loads(Path(path).read_text())
    return SpeedupReport(
        per_kernel={
            kernel_id: KernelSpeedup(
                baseline_time=raw["baseline_time"],
                best_time=raw["best_time"],
                speedup=raw["speedup"],
            )
            for kernel_id, raw in payload["per_kernel"].items()
        },
        geomean=payload["geomean"],
    )


# -- Histogram and table exports ----------------------------------------------


def export_histogram_csv(histogram: PermutationHistogram, path: str | Path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["bucket_low", "bucket_high", "percent"])
        for bucket in histogram.buckets:
            writer.writerow([_fmt(bucket.low), _fmt(bucket.high), _fmt(bucket.percent)])
        writer.writerow(["FAIL", "FAIL", _fmt(histogram.failure_percent)])


def export_loo_csv(table: dict[str, list[float]], path: str | Path) -> None:
    """Leave-one-out table: one row per (method, evaluation count)."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["method", "eval_count", "geomean_speedup"])
        for method in sorted(table):
            for count, value in enumerate(table[method], start=1):
                writer.writerow([method, str(count), _fmt(value)])


def export_failures_csv(summary: dict[RecordStatus, float], path: str | Path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["status", "fraction"])
        for status in sorted(summary, key=lambda s: s.value):
            writer.writerow([status.value, _fmt(summary[status])])


def export(obj, path: str | Path, fmt: str = "csv") -> None:
    """Dispatching convenience wrapper over the typed export functions."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"unsupported export format {fmt!r}")
    if isinstance(obj, ResultsStore):
        (export_records_csv if fmt == "csv" else export_records_json)(obj.records, path)
    elif isinstance(obj, CrossApplyMatrix):
        (export_matrix_csv if fmt == "csv" else export_matrix_json)(obj, path)
    elif isinstance(obj, SpeedupReport):
        (export_report_csv if fmt == "csv" else export_report_json)(obj, path)
    elif isinstance(obj, PermutationHistogram):
        if fmt != "csv":
            raise ValueError("histograms export as CSV only")
        export_histogram_csv(obj, path)
    else:
        raise TypeError(f"cannot export object of type {type(obj).__name__}")
