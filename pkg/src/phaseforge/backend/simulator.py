"""Deterministic desk-scale backend that models kernels with planted pass-sequence effects."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path

from ..catalog import PassId, PhaseOrder, render_phase_order
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

# Hard envelope on the pseudo-noise applied to simulated wall times.
MAX_NOISE_AMPLITUDE = 0.01


@dataclass(frozen=True)
class Motif:
    """A contiguous pass subsequence that scales a kernel's wall time when present."""

    passes: tuple[PassId, ...]
    multiplier: float

    def __post_init__(self) -> None:
        if not self.passes:
            raise ValueError("motif must contain at least one pass")
        if self.multiplier <= 0:
            raise ValueError(f"motif multiplier must be positive, got {self.multiplier}")

    @classmethod
    def of(cls, names: list[str] | tuple[str, ...], multiplier: float) -> Motif:
        return cls(tuple(PassId(n) for n in names), multiplier)


@dataclass(frozen=True)
class SimKernelModel:
    """Ground-truth model for one simulated kernel.

    ``failure_rates`` are the (no-IR, incorrect-output, broken-report)
    probabilities over random orders. ``noop_passes`` are dropped when forming
    the artifact, so distinct orders can share a digest. ``latent_motifs``
    pass the quick validation input but fail revalidation on freshly generated
    inputs. ``noise_amplitude`` bounds the deterministic pseudo-noise factor
    ``1 ± amplitude`` on wall times.
    """

    baseline_time: float
    motifs: tuple[Motif, ...] = ()
    failure_rates: tuple[float, float, float] = (0.0, 0.0, 0.0)
    seed_salt: int = 0
    noop_passes: frozenset[str] = frozenset()
    latent_motifs: tuple[tuple[PassId, ...], ...] = ()
    noise_amplitude: float = MAX_NOISE_AMPLITUDE

    def __post_init__(self) -> None:
        if self.baseline_time <= 0:
            raise ValueError(f"baseline_time must be positive, got {self.baseline_time}")
        if len(self.failure_rates) != 3:
            raise ValueError("failure_rates must be (no-IR, incorrect, broken)")
        if any(not 0.0 <= r <= 1.0 for r in self.failure_rates):
            raise ValueError(f"failure rates must each lie in [0, 1]: {self.failure_rates}")
        if sum(self.failure_rates) >= 1.0:
            raise ValueError(f"failure rates must sum to < 1: {self.failure_rates}")
        if not 0.0 <= self.noise_amplitude <= MAX_NOISE_AMPLITUDE:
            raise ValueError(
                f"noise_amplitude must lie in [0, {MAX_NOISE_AMPLITUDE}],"
                f" got {self.noise_amplitude}"
            )

    def to_json_dict(self) -> dict:
        return {
            "baseline_time": self.baseline_time,
            "motifs": [
                {"passes": [p.name for p in m.passes], "multiplier": m.multiplier}
                for m in self.motifs
            ],
            "failure_rates": list(self.failure_rates),
            "seed_salt": self.seed_salt,
            "noop_passes": sorted(self.noop_passes),
            "latent_motifs": [[p.name for p in m] for m in self.latent_motifs],
            "noise_amplitude": self.noise_amplitude,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> SimKernelModel:
        rates = data.get("failure_rates", (0.0, 0.0, 0.0))
        return cls(
            baseline_time=data["baseline_time"],
            motifs=tuple(
                Motif.of(m["passes"], m["multiplier"]) for m in data.get("motifs", ())
            ),
            failure_rates=(rates[0], rates[1], rates[2]),
            seed_salt=data.get("seed_salt", 0),
            noop_passes=frozenset(data.get("noop_passes", ())),
            latent_motifs=tuple(
                tuple(PassId(n) for n in m) for m in data.get("latent_motifs", ())
            ),
            noise_amplitude=data.get("noise_amplitude", MAX_NOISE_AMPLITUDE),
        )

    @classmethod
    def load(cls, path: str | Path) -> SimKernelModel:
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def _hash_units(seed_salt: int, text: str) -> tuple[float, float]:
    digest = hashlib.sha256(f"{seed_salt}:{text}".encode()).digest()
    band = int.from_bytes(digest[:8], "big") / 2.0**64
    noise = int.from_bytes(digest[8:16], "big") / 2.0**64
    return band, noise


def _contains_contiguous(sequence: tuple[PassId, ...], sub: tuple[PassId, ...]) -> bool:
    width = len(sub)
    if width == 0 or width > len(sequence):
        return False
    return any(sequence[i:i + width] == sub for i in range(len(sequence) - width + 1))


def effective_passes(model: SimKernelModel, order: PhaseOrder) -> tuple[PassId, ...]:
    """The order with the model's no-op passes removed; this is what codegen sees."""
    return tuple(p for p in order.passes if p.name not in model.noop_passes)


def sim_evaluate(
    model: SimKernelModel, order: PhaseOrder
) -> tuple[CompileOutcome, ExecutionOutcome | None]:
    """Deterministically evaluate one order against a kernel model.

    A hash of (seed_salt, rendered order) selects the failure band and the
    pseudo-noise factor. The artifact content is the rendered order with no-op
    passes dropped; motifs are matched against that effective sequence so
    equal artifacts share motif effects. The execution outcome is ``None``
    when compilation fails.
    """
    band, noise_unit = _hash_units(model.seed_salt, render_phase_order(order))
    p_no_ir, p_incorrect, p_broken = model.failure_rates
    if band < p_no_ir:
        return CompileOutcome.optimizer_failure("simulated optimizer crash"), None

    effective = effective_passes(model, order)
    artifact = Artifact.from_content(
        " ".join(f"-{p.name}" for p in effective).encode()
    )
    compiled = CompileOutcome.success(artifact)

    if band < p_no_ir + p_incorrect + p_broken and band >= p_no_ir + p_incorrect:
        return compiled, ExecutionOutcome(ExecutionStatus.BROKEN_REPORT)

    multiplier = 1.0
    for motif in model.motifs:
        if _contains_contiguous(effective, motif.passes):
            multiplier *= motif.multiplier
    noise = 1.0 + model.noise_amplitude * (2.0 * noise_unit - 1.0)
    wall_time = model.baseline_time * multiplier * noise

    if band < p_no_ir + p_incorrect:
        return compiled, ExecutionOutcome(ExecutionStatus.INVALID_OUTPUT, wall_time=wall_time)
    return compiled, ExecutionOutcome(ExecutionStatus.VALID, wall_time=wall_time)


def _garbled(reference: tuple[float, ...]) -> tuple[float, ...]:
    # Guaranteed to miss any per-element tolerance check against the reference.
    if not reference:
        return (1.0,)
    return tuple(r * 1.5 + 1.0 for r in reference)


class SimulatorBackend(Backend):
    """Pure, replayable backend over per-kernel SimKernelModel ground truth."""

    @staticmethod
    def _model(kernel: KernelCase) -> SimKernelModel:
        if not isinstance(kernel.source, SimKernelModel):
            raise BackendError(
                f"kernel {kernel.id!r} does not carry a simulator model"
            )
        return kernel.source

    def compile(self, kernel: KernelCase, order: PhaseOrder) -> CompileOutcome:
        return sim_evaluate(self._model(kernel), order)[0]

    def execute(
        self,
        kernel: KernelCase,
        order: PhaseOrder,
        artifact: Artifact,
        input_kind: InputKind,
        random_input_index: int | None = None,
    ) -> ExecutionOutcome:
        model = self._model(kernel)
        outcome = sim_evaluate(model, order)[1]
        if outcome is None:
            raise BackendError("execute() called for an order that does not compile")
        if outcome.status is ExecutionStatus.BROKEN_REPORT:
            return outcome
        reference = tuple(kernel.reference_outputs)
        if outcome.status is ExecutionStatus.INVALID_OUTPUT:
            return replace(outcome, outputs=_garbled(reference))
        if random_input_index is not None:
            effective = effective_passes(model, order)
            if any(_contains_contiguous(effective, m) for m in model.latent_motifs):
                return ExecutionOutcome(
                    ExecutionStatus.INVALID_OUTPUT,
                    wall_time=outcome.wall_time,
                    outputs=_garbled(reference),
                )
        return replace(outcome, outputs=reference)
