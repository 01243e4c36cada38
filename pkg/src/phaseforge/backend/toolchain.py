"""Subprocess toolchain driver: frontend -> optimizer -> linker -> codegen, plus a runner."""

from __future__ import annotations

import json
import math
import re
import shlex
import shutil
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

from ..catalog import PhaseOrder
from .types import (
    Artifact,
    Backend,
    BackendError,
    CompileOutcome,
    ExecutionOutcome,
    ExecutionStatus,
    InputKind,
    KernelCase,
)

_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")

_STAGE_PLACEHOLDERS = {
    "frontend_cmd": {"input", "output"},
    "optimizer_cmd": {"input", "output", "passes"},
    "linker_cmd": {"input", "output"},
    "codegen_cmd": {"input", "output"},
    "runner_cmd": {"artifact", "data", "kind"},
}


@dataclass(frozen=True)
class ToolchainSpec:
    """Command templates for the four compile stages and the runner.

    Placeholders: ``{input}``, ``{output}``, ``{passes}`` for the compile
    stages; ``{artifact}``, ``{data}``, ``{kind}`` for the runner. Each
    required placeholder must appear exactly once in its template.
    """

    frontend_cmd: str
    optimizer_cmd: str
    linker_cmd: str
    codegen_cmd: str
    runner_cmd: str
    work_dir: Path
    exec_timeout: float = 10.0

    def __post_init__(self) -> None:
        if self.exec_timeout <= 0:
            raise ValueError(f"exec_timeout must be positive, got {self.exec_timeout}")
        for field_name, required in _STAGE_PLACEHOLDERS.items():
            template = getattr(self, field_name)
            found = _PLACEHOLDER_RE.findall(template)
            unknown = set(found) - required
            if unknown:
                raise ValueError(
                    f"{field_name} has unsupported placeholders {sorted(unknown)}"
                )
            for name in required:
                if found.count(name) != 1:
                    raise ValueError(
                        f"{field_name} must contain {{{name}}} exactly once: {template!r}"
                    )

    @classmethod
    def from_json_dict(cls, data: dict, base_dir: Path | None = None) -> ToolchainSpec:
        work_dir = Path(data["work_dir"])
        if base_dir is not None and not work_dir.is_absolute():
            work_dir = base_dir / work_dir
        return cls(
            frontend_cmd=data["frontend_cmd"],
            optimizer_cmd=data["optimizer_cmd"],
            linker_cmd=data["linker_cmd"],
            codegen_cmd=data["codegen_cmd"],
            runner_cmd=data["runner_cmd"],
            work_dir=work_dir,
            exec_timeout=data.get("exec_timeout", 10.0),
        )

    @classmethod
    def load(cls, path: str | Path) -> ToolchainSpec:
        path = Path(path)
        return cls.from_json_dict(json.loads(path.read_text()), base_dir=path.parent)


def _expand(template: str, substitutions: dict[str, str], passes: list[str] | None = None) -> list[str]:
    """Split a template and substitute placeholders.

    A bare ``{passes}`` token expands to one argv entry per pass flag; when
    embedded in a larger token the flags are joined by spaces instead.
    """
    argv: list[str] = []
    joined_passes = " ".join(passes) if passes is not None else None
    for token in shlex.split(template):
        if token == "{passes}" and passes is not None:
            argv.extend(passes)
            continue
        for key, value in substitutions.items():
            token = token.replace("{" + key + "}", value)
        if joined_passes is not None:
            token = token.replace("{passes}", joined_passes)
        argv.append(token)
    return argv


def _run_stage(argv: list[str]) -> tuple[int, str]:
    try:
        proc = subprocess.run(argv, capture_output=True, text=True)
    except OSError as exc:
        raise BackendError(f"failed to invoke {argv[0]!r}: {exc}") from exc
    log = (proc.stdout + proc.stderr).strip()
    return proc.returncode, log


def compile_kernel(spec: ToolchainSpec, kernel: KernelCase, order: PhaseOrder) -> CompileOutcome:
    """Run the four-stage pipeline; an empty order skips the optimizer stage.

    Frontend failures raise BackendError (phase orders cannot affect that
    stage, so they indicate a broken configuration or kernel). Optimizer
    failures map to OptimizerFailure; linker and codegen failures map to
    CodegenFailure.
    """
    source = Path(kernel.source)
    if not source.exists():
        raise BackendError(f"kernel source not found: {source}")
    spec.work_dir.mkdir(parents=True, exist_ok=True)
    workdir = Path(tempfile.mkdtemp(prefix=f"{kernel.id}-", dir=spec.work_dir))
    try:
        frontend_ir = workdir / "frontend.ir"
        optimized_ir = workdir / "optimized.ir"
        linked_ir = workdir / "linked.ir"
        artifact_path = workdir / "artifact.out"

        code, log = _run_stage(
            _expand(spec.frontend_cmd, {"input": str(source), "output": str(frontend_ir)})
        )
        if code != 0 or not frontend_ir.exists():
            raise BackendError(f"frontend stage failed for {kernel.id!r}: {log}")

        if len(order) == 0:
            optimized_ir = frontend_ir
        else:
            pass_flags = [f"-{p.name}" for p in order.passes]
            code, log = _run_stage(
                _expand(
                    spec.optimizer_cmd,
                    {"input": str(frontend_ir), "output": str(optimized_ir)},
                    passes=pass_flags,
                )
            )
            if code != 0 or not optimized_ir.exists():
                return CompileOutcome.optimizer_failure(log)

        code, log = _run_stage(
            _expand(spec.linker_cmd, {"input": str(optimized_ir), "output": str(linked_ir)})
        )
        if code != 0 or not linked_ir.exists():
            return CompileOutcome.codegen_failure(log)

        code, log = _run_stage(
            _expand(spec.codegen_cmd, {"input": str(linked_ir), "output": str(artifact_path)})
        )
        if code != 0 or not artifact_path.exists():
            return CompileOutcome.codegen_failure(log)

        return CompileOutcome.success(Artifact.from_content(artifact_path.read_bytes()))
    finally:
        shutil.rmtree(workdir, ignore_errors=True)


def parse_report(text: str) -> tuple[float, tuple[float, ...]] | None:
    """Parse the runner report: ``TIME <s>``, ``OUT <n>``, then n output lines.

    Returns None for anything that deviates from that exact shape.
    """
    lines = text.splitlines()
    if len(lines) < 2:
        return None
    time_fields = lines[0].split()
    out_fields = lines[1].split()
    if len(time_fields) != 2 or time_fields[0] != "TIME":
        return None
    if len(out_fields) != 2 or out_fields[0] != "OUT":
        return None
    try:
        wall_time = float(time_fields[1])
        count = int(out_fields[1])
    except ValueError:
        return None
    if not math.isfinite(wall_time) or wall_time <= 0 or count < 0:
        return None
    if len(lines) != 2 + count:
        return None
    outputs: list[float] = []
    for line in lines[2:]:
        fields = line.split()
        if len(fields) != 1:
            return None
        try:
            value = float(fields[0])
        except ValueError:
            return None
        if not math.isfinite(value):
            return None
        outputs.append(value)
    return wall_time, tuple(outputs)


def execute_artifact(
    spec: ToolchainSpec,
    kernel: KernelCase,
    artifact: Artifact,
    input_kind: InputKind,
    random_input_index: int | None = None,
    timeout: float | None = None,
) -> ExecutionOutcome:
    """Invoke the runner on ``artifact`` and classify the result.

    The process is killed at the timeout. A nonzero exit is a Crash; exit 0
    with an unparseable report is a BrokenReport. ``random_input_index=n``
    passes ``<validation_input>#n`` as the data descriptor with kind
    ``validation``, asking the runner for a freshly generated input.
    """
    if random_input_index is not None:
        data = f"{kernel.validation_input}#{random_input_index}"
        kind = InputKind.VALIDATION
    else:
        data = (
            kernel.validation_input
            if input_kind is InputKind.VALIDATION
            else kernel.measurement_input
        )
        kind = input_kind
    spec.work_dir.mkdir(parents=True, exist_ok=True)
    with tempfile.NamedTemporaryFile(dir=spec.work_dir, suffix=".artifact", delete=False) as handle:
        handle.write(artifact.content)
        artifact_path = Path(handle.name)
    try:
        argv = _expand(
            spec.runner_cmd,
            {"artifact": str(artifact_path), "data": data, "kind": kind.value},
        )
        try:
            proc = subprocess.run(
                argv,
                capture_output=True,
                text=True,
                timeout=timeout if timeout is not None else spec.exec_timeout,
            )
        except subprocess.TimeoutExpired:
            return ExecutionOutcome(ExecutionStatus.TIMEOUT, log="runner timed out")
        except OSError as exc:
            raise BackendError(f"failed to invoke runner: {exc}") from exc
        if proc.returncode != 0:
            return ExecutionOutcome(
                ExecutionStatus.CRASH, log=f"exit {proc.returncode}: {proc.stderr.strip()}"
            )
        parsed = parse_report(proc.stdout)
        if parsed is None:
            return ExecutionOutcome(
                ExecutionStatus.BROKEN_REPORT, log=proc.stdout[:500]
            )
        wall_time, outputs = parsed
        return ExecutionOutcome(ExecutionStatus.VALID, wall_time=wall_time, outputs=outputs)
    finally:
        artifact_path.unlink(missing_ok=True)


class ToolchainBackend(Backend):
    """Backend over a ToolchainSpec, with optional per-kernel timeout overrides."""

    def __init__(self, spec: ToolchainSpec):
        super().__init__()
        self.spec = spec
        self._timeout_overrides: dict[str, float] = {}

    def set_timeout_override(self, kernel_id: str, timeout: float) -> None:
        if timeout <= 0:
            raise ValueError(f"timeout must be positive, got {timeout}")
        self._timeout_overrides[kernel_id] = timeout

    def compile(self, kernel: KernelCase, order: PhaseOrder) -> CompileOutcome:
        return compile_kernel(self.spec, kernel, order)

    def execute(
        self,
        kernel: KernelCase,
        order: PhaseOrder,
        artifact: Artifact,
        input_kind: InputKind,
        random_input_index: int | None = None,
    ) -> ExecutionOutcome:
        return execute_artifact(
            self.spec,
            kernel,
            artifact,
            input_kind,
            random_input_index=random_input_index,
            timeout=self._timeout_overrides.get(kernel.id),
        )
