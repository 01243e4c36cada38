"""Shared backend types: artifacts, compile/execution outcomes, kernel cases."""

from __future__ import annotations

import abc
import hashlib
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING

from ..catalog import PhaseOrder

if TYPE_CHECKING:
    from .simulator import SimKernelModel


class BackendError(RuntimeError):
    """Configuration or invocation failure not attributable to a phase order."""


@dataclass(frozen=True)
class Artifact:
    """Compiled output, addressed by the hash of its content."""

    content: bytes
    digest: str

    @classmethod
    def from_content(cls, content: bytes) -> Artifact:
        return cls(content=content, digest=hashlib.sha256(content).hexdigest())


class CompileStatus(Enum):
    OK = "ok"
    OPTIMIZER_FAILURE = "optimizer-failure"
    CODEGEN_FAILURE = "codegen-failure"


@dataclass(frozen=True)
class CompileOutcome:
    status: CompileStatus
    artifact: Artifact | None = None
    log: str = ""

    def __post_init__(self) -> None:
        if (self.artifact is not None) != (self.status is CompileStatus.OK):
            raise ValueError("artifact must be present exactly when compilation succeeded")

    @property
    def is_ok(self) -> bool:
        return self.status is CompileStatus.OK

    @classmethod
    def success(cls, artifact: Artifact) -> CompileOutcome:
        return cls(CompileStatus.OK, artifact=artifact)

    @classmethod
    def optimizer_failure(cls, log: str) -> CompileOutcome:
        return cls(CompileStatus.OPTIMIZER_FAILURE, log=log)

    @classmethod
    def codegen_failure(cls, log: str) -> CompileOutcome:
        return cls(CompileStatus.CODEGEN_FAILURE, log=log)


class ExecutionStatus(Enum):
    VALID = "valid"
    INVALID_OUTPUT = "invalid-output"
    TIMEOUT = "timeout"
    CRASH = "crash"
    BROKEN_REPORT = "broken-report"


_TIMED_STATUSES = frozenset({ExecutionStatus.VALID, ExecutionStatus.INVALID_OUTPUT})


@dataclass(frozen=True)
class ExecutionOutcome:
    status: ExecutionStatus
    wall_time: float | None = None
    outputs: tuple[float, ...] | None = None
    log: str = ""

    def __post_init__(self) -> None:
        if (self.wall_time is not None) != (self.status in _TIMED_STATUSES):
            raise ValueError(
                f"wall_time must be present exactly for {sorted(s.value for s in _TIMED_STATUSES)},"
                f" got {self.status.value} with wall_time={self.wall_time}"
            )
        if self.wall_time is not None and self.wall_time <= 0:
            raise ValueError(f"wall_time must be positive, got {self.wall_time}")
        if self.status is ExecutionStatus.TIMEOUT and self.outputs is not None:
            raise ValueError("a timed-out execution cannot carry outputs")


class InputKind(Enum):
    VALIDATION = "validation"
    MEASUREMENT = "measurement"


@dataclass(frozen=True)
class KernelCase:
    """A benchmark unit: its program (source path or simulator model), the
    quick validation input, the timed measurement input, and the reference
    outputs for the validation input."""

    id: str
    source: str | Path | SimKernelModel
    validation_input: str
    measurement_input: str
    reference_outputs: tuple[float, ...]
    ir_text: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("kernel id must be nonempty")


class Backend(abc.ABC):
    """Compile-and-run interface shared by the subprocess toolchain and the simulator.

    Timing runs must hold ``measurement_lock``, the exclusive token that
    serializes measurement executions per target device.
    """

    def __init__(self) -> None:
        self._measurement_lock = threading.Lock()

    @property
    def measurement_lock(self) -> threading.Lock:
        return self._measurement_lock

    @abc.abstractmethod
    def compile(self, kernel: KernelCase, order: PhaseOrder) -> CompileOutcome:
        """Compile ``kernel`` under ``order``; an empty order is the baseline compile."""

    @abc.abstractmethod
    def execute(
        self,
        kernel: KernelCase,
        order: PhaseOrder,
        artifact: Artifact,
        input_kind: InputKind,
        random_input_index: int | None = None,
    ) -> ExecutionOutcome:
        """Run a compiled artifact against the selected input.

        ``random_input_index`` selects a freshly generated validation-style
        input (used by finalization revalidation) instead of the stock one.
        """
