"""Backends: the subprocess toolchain driver and the deterministic simulator."""

from .simulator import (
    Motif,
    SimKernelModel,
    SimulatorBackend,
    effective_passes,
    sim_evaluate,
)
from .toolchain import ToolchainBackend, ToolchainSpec, compile_kernel, execute_artifact, parse_report
from .types import (
    Artifact,
    Backend,
    BackendError,
    CompileOutcome,
    CompileStatus,
    ExecutionOutcome,
    ExecutionStatus,
    InputKind,
    KernelCase,
)

__all__ = [
    "Artifact",
    "Backend",
    "BackendError",
    "CompileOutcome",
    "CompileStatus",
    "ExecutionOutcome",
    "ExecutionStatus",
    "InputKind",
    "KernelCase",
    "Motif",
    "SimKernelModel",
    "SimulatorBackend",
    "ToolchainBackend",
    "ToolchainSpec",
    "compile_kernel",
    "effective_passes",
    "execute_artifact",
    "parse_report",
    "sim_evaluate",
]
