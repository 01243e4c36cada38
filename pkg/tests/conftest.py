"""Shared builders for simulator kernels, catalogs, and toolchain stubs."""

from __future__ import annotations

import sys
import textwrap
from pathlib import Path

import pytest

from phaseforge.backend.simulator import Motif, SimKernelModel, sim_evaluate
from phaseforge.backend.types import ExecutionStatus, KernelCase
from phaseforge.catalog import PassCatalog, PhaseOrder

DEFAULT_REFERENCE = (1.0, 2.0, 3.0)

# Small IR body reused by kernels that only need a non-degenerate feature vector.
BASIC_IR = textwrap.dedent(
    """\
    func body {
    entry:
      load
      store
      ret
    }
    """
)


def catalog_of(*names: str) -> PassCatalog:
    return PassCatalog.of(*names)


def order_of(*names: str) -> PhaseOrder:
    return PhaseOrder.of(*names)


def find_salt_with_valid_baseline(model_kwargs: dict, start: int = 0) -> int:
    """Smallest seed salt whose empty-order evaluation lands in the valid band,
    so the kernel's baseline behaves like a working benchmark."""
    for salt in range(start, start + 10000):
        model = SimKernelModel(seed_salt=salt, **model_kwargs)
        _, execution = sim_evaluate(model, PhaseOrder())
        if execution is not None and execution.status is ExecutionStatus.VALID:
            return salt
    raise AssertionError("no salt with a valid baseline found")


def sim_kernel(
    kernel_id: str = "kern",
    baseline_time: float = 1.0,
    motifs: tuple[Motif, ...] = (),
    failure_rates: tuple[float, float, float] = (0.0, 0.0, 0.0),
    seed_salt: int = 0,
    noop_passes: frozenset[str] = frozenset(),
    latent_motifs: tuple = (),
    noise_amplitude: float = 0.002,
    reference_outputs: tuple[float, ...] = DEFAULT_REFERENCE,
    ir_text: str | None = BASIC_IR,
) -> KernelCase:
    model = SimKernelModel(
        baseline_time=baseline_time,
        motifs=motifs,
        failure_rates=failure_rates,
        seed_salt=seed_salt,
        noop_passes=noop_passes,
        latent_motifs=latent_motifs,
        noise_amplitude=noise_amplitude,
    )
    return KernelCase(
        id=kernel_id,
        source=model,
        validation_input="small",
        measurement_input="full",
        reference_outputs=reference_outputs,
        ir_text=ir_text,
    )


STUB_TOOL = textwrap.dedent(
    """\
    import sys
    from pathlib import Path

    mode = sys.argv[1]
    if mode == "copy":           # <in> <out>: pass content through unchanged
        Path(sys.argv[3]).write_text(Path(sys.argv[2]).read_text())
    elif mode == "opt":          # <in> <out> [passes...]: record applied passes
        text = Path(sys.argv[2]).read_text()
        Path(sys.argv[3]).write_text(text + "opt:" + " ".join(sys.argv[4:]) + "\\n")
    elif mode == "opt-fail":
        sys.stderr.write("optimizer exploded\\n")
        sys.exit(1)
    elif mode == "opt-silent":   # exits 0 but never writes its output file
        pass
    elif mode == "codegen-fail":
        sys.exit(1)
    elif mode == "stage":        # <name> <in> <out>: tag content with the stage name
        text = Path(sys.argv[3]).read_text()
        Path(sys.argv[4]).write_text(text + sys.argv[2] + "\\n")
    else:
        sys.exit(2)
    """
)

STUB_RUNNER = textwrap.dedent(
    """\
    import sys
    import time
    from pathlib import Path

    mode = sys.argv[1]           # then: <artifact> <data> <kind>
    if mode == "ok":
        print("TIME 0.25")
        print("OUT 2")
        print("1.0")
        print("2.0")
    elif mode == "sleep":
        time.sleep(20)
    elif mode == "garbage":
        print("segmentation fault (core dumped)")
    elif mode == "crash":
        sys.stderr.write("boom\\n")
        sys.exit(3)
    elif mode == "echo-input":   # report depends on the artifact and data descriptor
        content = Path(sys.argv[2]).read_text()
        print("TIME 0.5")
        print("OUT 1")
        print(float(len(content) % 7) + float(len(sys.argv[3])))
    else:
        sys.exit(2)
    """
)


@pytest.fixture
def stub_tools(tmp_path: Path) -> dict[str, str]:
    tool = tmp_path / "tool.py"
    tool.write_text(STUB_TOOL)
    runner = tmp_path / "runner.py"
    runner.write_text(STUB_RUNNER)
    return {
        "tool": f"{sys.executable} {tool}",
        "runner": f"{sys.executable} {runner}",
        "work_dir": str(tmp_path / "work"),
    }
