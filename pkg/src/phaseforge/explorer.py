"""Design-space exploration: candidate evaluation with artifact dedup, the
validation/measurement split, finalization, sequence reduction, and
cross-application studies."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from random import Random

from .backend.types import (
    Artifact,
    Backend,
    BackendError,
    CompileOutcome,
    ExecutionStatus,
    InputKind,
    KernelCase,
)
from .catalog import PassCatalog, PhaseOrder, parse_phase_order, random_phase_order, render_phase_order
from .irfeat import FeatureVector

logger = logging.getLogger(__name__)


class NoValidCandidateError(RuntimeError):
    """All finalization candidates failed revalidation."""


@dataclass(frozen=True)
class ExplorationConfig:
    num_sequences: int = 10000
    max_len: int = 256
    seed: int = 1729
    top_k: int = 10
    final_reps: int = 30
    final_random_inputs: int = 30
    rtol: float = 0.01
    atol: float = 1e-6

    def __post_init__(self) -> None:
        for name in ("num_sequences", "max_len", "top_k", "final_reps", "final_random_inputs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.rtol < 1.0:
            raise ValueError(f"rtol must lie in [0, 1), got {self.rtol}")
        if self.atol < 0.0:
            raise ValueError(f"atol must be non-negative, got {self.atol}")


class RecordStatus(Enum):
    VALID = "valid"
    INVALID_OUTPUT = "invalid-output"
    TIMEOUT = "timeout"
    CRASH = "crash"
    BROKEN_REPORT = "broken-report"
    NO_IR = "no-ir"
    REUSED = "reused"


_EXECUTION_TO_RECORD = {
    ExecutionStatus.INVALID_OUTPUT: RecordStatus.INVALID_OUTPUT,
    ExecutionStatus.TIMEOUT: RecordStatus.TIMEOUT,
    ExecutionStatus.CRASH: RecordStatus.CRASH,
    ExecutionStatus.BROKEN_REPORT: RecordStatus.BROKEN_REPORT,
}


@dataclass(frozen=True)
class EvaluationRecord:
    """Outcome of evaluating one phase order on one kernel.

    A REUSED record cites, through its digest, the earlier record whose
    artifact was identical; its wall time is copied from that record.
    """

    kernel_id: str
    order: PhaseOrder
    artifact_digest: str | None
    status: RecordStatus
    wall_time: float | None
    eval_index: int

    def __post_init__(self) -> None:
        if self.status is RecordStatus.VALID and self.wall_time is None:
            raise ValueError("a valid record must carry a wall time")
        if self.status is RecordStatus.NO_IR and self.artifact_digest is not None:
            raise ValueError("a no-IR record cannot carry an artifact digest")


def compare_outputs(
    reference: tuple[float, ...] | list[float],
    candidate: tuple[float, ...] | list[float],
    rtol: float,
    atol: float,
) -> bool:
    """Per-element check: |cand - ref| <= max(atol, rtol * |ref|); lengths must match."""
    if len(reference) != len(candidate):
        return False
    return all(
        abs(c - r) <= max(atol, rtol * abs(r)) for r, c in zip(reference, candidate)
    )


@dataclass(frozen=True)
class CandidateOutcome:
    status: RecordStatus
    wall_time: float | None
    digest: str | None


def evaluate_candidate(
    backend: Backend, kernel: KernelCase, order: PhaseOrder, config: ExplorationConfig
) -> CandidateOutcome:
    """Compile, check correctness on the validation input, then time one
    measurement run. The validation run is never timed; the measurement run is
    never used for correctness decisions."""
    compiled = backend.compile(kernel, order)
    if not compiled.is_ok:
        return CandidateOutcome(RecordStatus.NO_IR, None, None)
    return _fresh_evaluation(backend, kernel, order, compiled, config)


def _sorted_records(records: list[EvaluationRecord]) -> list[EvaluationRecord]:
    """Valid results ascending by wall time (ties by eval index), failures last
    by eval index. Reused records rank according to the record they cite."""
    fresh: dict[str, EvaluationRecord] = {}
    for record in records:
        if record.artifact_digest is not None and record.status is not RecordStatus.REUSED:
            fresh.setdefault(record.artifact_digest, record)

    def resolved_valid(record: EvaluationRecord) -> bool:
        if record.status is RecordStatus.VALID:
            return True
        if record.status is RecordStatus.REUSED:
            cited = fresh.get(record.artifact_digest)
            return cited is not None and cited.status is RecordStatus.VALID
        return False

    def key(record: EvaluationRecord):
        if resolved_valid(record):
            return (0, record.wall_time, record.eval_index)
        return (1, 0.0, record.eval_index)

    return sorted(records, key=key)


def explore(
    kernel: KernelCase,
    catalog: PassCatalog,
    config: ExplorationConfig,
    backend: Backend,
) -> list[EvaluationRecord]:
    """Evaluate ``num_sequences`` random candidates, reusing results whenever a
    previously seen artifact digest reappears. Returns records sorted with the
    fastest valid result first."""
    if not kernel.reference_outputs:
        raise ValueError(f"kernel {kernel.id!r} has no reference outputs for validation")
    rng = Random(config.seed)
    records: list[EvaluationRecord] = []
    seen: dict[str, EvaluationRecord] = {}
    for index in range(config.num_sequences):
        order = random_phase_order(catalog, config.max_len, rng)

        compiled = backend.compile(kernel, order)
        if not compiled.is_ok:
            records.append(
                EvaluationRecord(kernel.id, order, None, RecordStatus.NO_IR, None, index)
            )
            continue
        digest = compiled.artifact.digest
        if digest in seen:
            cited = seen[digest]
            records.append(
                EvaluationRecord(
                    kernel.id, order, digest, RecordStatus.REUSED, cited.wall_time, index
                )
            )
            continue

        outcome = _fresh_evaluation(backend, kernel, order, compiled, config)
        record = EvaluationRecord(
            kernel.id, order, digest, outcome.status, outcome.wall_time, index
        )
        seen[digest] = record
        records.append(record)
    logger.debug("explored %d candidates for %s", config.num_sequences, kernel.id)
    return _sorted_records(records)


def _fresh_evaluation(
    backend: Backend,
    kernel: KernelCase,
    order: PhaseOrder,
    compiled: CompileOutcome,
    config: ExplorationConfig,
) -> CandidateOutcome:
    digest = compiled.artifact.digest
    validation = backend.execute(kernel, order, compiled.artifact, InputKind.VALIDATION)
    if validation.status is not ExecutionStatus.VALID:
        return CandidateOutcome(_EXECUTION_TO_RECORD[validation.status], None, digest)
    if validation.outputs is not None and not compare_outputs(
        kernel.reference_outputs, validation.outputs, config.rtol, config.atol
    ):
        return CandidateOutcome(RecordStatus.INVALID_OUTPUT, None, digest)
    with backend.measurement_lock:
        measurement = backend.execute(kernel, order, compiled.artifact, InputKind.MEASUREMENT)
    if measurement.status in (ExecutionStatus.VALID, ExecutionStatus.INVALID_OUTPUT):
        return CandidateOutcome(RecordStatus.VALID, measurement.wall_time, digest)
    return CandidateOutcome(_EXECUTION_TO_RECORD[measurement.status], None, digest)


def measure_average(
    backend: Backend,
    kernel: KernelCase,
    order: PhaseOrder,
    reps: int,
    config: ExplorationConfig,
) -> float | None:
    """Average wall time over ``reps`` measurement runs; None if any run fails."""
    compiled = backend.compile(kernel, order)
    if not compiled.is_ok:
        return None
    times: list[float] = []
    for _ in range(reps):
        with backend.measurement_lock:
            outcome = backend.execute(kernel, order, compiled.artifact, InputKind.MEASUREMENT)
        if outcome.status not in (ExecutionStatus.VALID, ExecutionStatus.INVALID_OUTPUT):
            return None
        times.append(outcome.wall_time)
    return math.fsum(times) / len(times)


def _passes_random_input_validation(
    backend: Backend,
    kernel: KernelCase,
    order: PhaseOrder,
    artifact: Artifact,
    baseline_artifact: Artifact,
    config: ExplorationConfig,
) -> bool:
    """Check the candidate against the reference implementation (the baseline
    compile) on freshly generated inputs."""
    empty = PhaseOrder()
    for index in range(config.final_random_inputs):
        reference_run = backend.execute(
            kernel, empty, baseline_artifact, InputKind.VALIDATION, random_input_index=index
        )
        candidate_run = backend.execute(
            kernel, order, artifact, InputKind.VALIDATION, random_input_index=index
        )
        if reference_run.status is not ExecutionStatus.VALID:
            raise BackendError(
                f"baseline run failed on random input {index} for kernel {kernel.id!r}"
            )
        if candidate_run.status is not ExecutionStatus.VALID:
            return False
        if reference_run.outputs is None or candidate_run.outputs is None:
            continue
        if not compare_outputs(
            reference_run.outputs, candidate_run.outputs, config.rtol, config.atol
        ):
            return False
    return True


def finalize(
    kernel: KernelCase,
    records: list[EvaluationRecord],
    config: ExplorationConfig,
    backend: Backend,
) -> tuple[PhaseOrder, float]:
    """Re-measure the top candidates (``final_reps`` runs each, averaged),
    revalidate them on freshly generated inputs, and return the fastest one
    that passes. Candidates with equal artifacts are considered once."""
    candidates: list[PhaseOrder] = []
    taken_digests: set[str] = set()
    fresh: dict[str, EvaluationRecord] = {}
    for record in records:
        if record.artifact_digest is not None and record.status is not RecordStatus.REUSED:
            fresh.setdefault(record.artifact_digest, record)
    for record in _sorted_records(records):
        status = record.status
        if status is RecordStatus.REUSED:
            cited = fresh.get(record.artifact_digest)
            status = cited.status if cited is not None else status
        if status is not RecordStatus.VALID:
            continue
        if record.artifact_digest in taken_digests:
            continue
        taken_digests.add(record.artifact_digest)
        candidates.append(record.order)
        if len(candidates) == config.top_k:
            break
    if not candidates:
        raise NoValidCandidateError(f"no valid exploration results for kernel {kernel.id!r}")

    baseline_compiled = backend.compile(kernel, PhaseOrder())
    if not baseline_compiled.is_ok:
        raise BackendError(f"baseline compile failed for kernel {kernel.id!r}")

    best: tuple[float, PhaseOrder] | None = None
    for order in candidates:
        compiled = backend.compile(kernel, order)
        if not compiled.is_ok:
            continue
        if not _passes_random_input_validation(
            backend, kernel, order, compiled.artifact, baseline_compiled.artifact, config
        ):
            continue
        averaged = measure_average(backend, kernel, order, config.final_reps, config)
        if averaged is None:
            continue
        if best is None or averaged < best[0]:
            best = (averaged, order)
    if best is None:
        raise NoValidCandidateError(
            f"all top-{len(candidates)} candidates failed revalidation for kernel {kernel.id!r}"
        )
    return best[1], best[0]


def reduce_order(
    kernel: KernelCase,
    order: PhaseOrder,
    backend: Backend,
    epsilon: float = 0.01,
    config: ExplorationConfig | None = None,
) -> PhaseOrder:
    """Greedy left-to-right elimination to a fixpoint: drop a pass instance
    whenever the reduced order still validates and measures within
    (1 + epsilon) of the best time seen, so the result performs within
    (1 + epsilon) of the input order and is minimal under single deletion."""
    if epsilon < 0:
        raise ValueError(f"epsilon must be non-negative, got {epsilon}")
    config = config or ExplorationConfig()
    incumbent = evaluate_candidate(backend, kernel, order, config)
    if incumbent.status is not RecordStatus.VALID:
        raise ValueError(
            f"order must validate on kernel {kernel.id!r} before reduction"
            f" (got {incumbent.status.value})"
        )
    best_time = incumbent.wall_time
    current = list(order.passes)
    changed = True
    while changed:
        changed = False
        index = 0
        while index < len(current):
            trial = PhaseOrder(tuple(current[:index] + current[index + 1:]))
            outcome = evaluate_candidate(backend, kernel, trial, config)
            if (
                outcome.status is RecordStatus.VALID
                and outcome.wall_time <= (1.0 + epsilon) * best_time
            ):
                current = list(trial.passes)
                best_time = min(best_time, outcome.wall_time)
                changed = True
            else:
                index += 1
    return PhaseOrder(tuple(current))


@dataclass(frozen=True)
class CellResult:
    """One cross-application cell: the raw performance ratio, or a validation failure."""

    ratio: float | None
    failed: bool

    def __post_init__(self) -> None:
        if (self.ratio is None) != self.failed:
            raise ValueError("a cell carries a ratio exactly when it did not fail")


@dataclass(frozen=True)
class CrossApplyMatrix:
    kernel_ids: tuple[str, ...]
    cells: dict[tuple[str, str], CellResult]


def cross_apply(
    kernels: list[KernelCase],
    kb: KnowledgeBase,
    backend: Backend,
    config: ExplorationConfig | None = None,
) -> CrossApplyMatrix:
    """Evaluate each kernel's best order on every other kernel. Cell (i, j) is
    best_time(j) / time(j under best_order(i)), kept raw here; export clamps
    to [0, 1]. Validation failures are marked failed."""
    config = config or ExplorationConfig()
    for kernel in kernels:
        if kernel.id not in kb.entries:
            raise ValueError(f"knowledge base has no entry for kernel {kernel.id!r}")
    ids = tuple(k.id for k in kernels)
    cells: dict[tuple[str, str], CellResult] = {}
    for owner in kernels:
        owner_order = kb.entries[owner.id].best_order
        for target in kernels:
            outcome = evaluate_candidate(backend, target, owner_order, config)
            if outcome.status is RecordStatus.VALID:
                ratio = kb.entries[target.id].best_time / outcome.wall_time
                cells[(owner.id, target.id)] = CellResult(ratio=ratio, failed=False)
            else:
                cells[(owner.id, target.id)] = CellResult(ratio=None, failed=True)
    return CrossApplyMatrix(kernel_ids=ids, cells=cells)


@dataclass(frozen=True)
class KbEntry:
    best_order: PhaseOrder
    best_time: float
    baseline_time: float
    feature_vector: FeatureVector

    def __post_init__(self) -> None:
        if self.best_time <= 0 or self.baseline_time <= 0:
            raise ValueError("knowledge base times must be positive")
        if len(self.best_order) > 0 and self.best_time > self.baseline_time:
            raise ValueError(
                "a non-empty best order must not be slower than the baseline;"
                " store an empty order for no-improvement kernels"
            )


@dataclass
class KnowledgeBase:
    """Per-kernel best-found reduced orders with their timings and features."""

    entries: dict[str, KbEntry] = field(default_factory=dict)

    def add(self, kernel_id: str, entry: KbEntry) -> None:
        self.entries[kernel_id] = entry

    def to_json_dict(self) -> dict:
        return {
            "entries": {
                kernel_id: {
                    "best_order": render_phase_order(entry.best_order),
                    "best_time": entry.best_time,
                    "baseline_time": entry.baseline_time,
                    "feature_vector": list(entry.feature_vector.values),
                }
                for kernel_id, entry in self.entries.items()
            }
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> KnowledgeBase:
        kb = cls()
        for kernel_id, raw in data.get("entries", {}).items():
            kb.add(
                kernel_id,
                KbEntry(
                    best_order=parse_phase_order(raw["best_order"]),
                    best_time=raw["best_time"],
                    baseline_time=raw["baseline_time"],
                    feature_vector=FeatureVector(tuple(raw["feature_vector"])),
                ),
            )
        return kb

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> KnowledgeBase:
        return cls.from_json_dict(json.loads(Path(path).read_text()))
