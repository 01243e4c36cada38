"""Command-line front door: explore, suggest, and the experiment reports.

Outputs land under --out-dir with fixed names: records.csv, kb.json,
matrix.csv, permute.csv, loo.csv, failures.csv. With the simulator backend and
a fixed seed every command is bit-reproducible.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from random import Random

from .advisor import ReferenceSet, evaluate_suggestions, leave_one_out, suggest_knn
from .backend.simulator import SimKernelModel, SimulatorBackend
from .backend.toolchain import ToolchainBackend, ToolchainSpec
from .backend.types import Backend, BackendError, KernelCase
from .catalog import PassCatalog, PhaseOrder, random_permutations, render_phase_order
from .explorer import (
    ExplorationConfig,
    KbEntry,
    KnowledgeBase,
    NoValidCandidateError,
    EvaluationRecord,
    cross_apply,
    evaluate_candidate,
    explore,
    finalize,
    measure_average,
    reduce_order,
)
from .irfeat import DegenerateVectorError, extract_features, parse_ir
from .results import (
    ResultsStore,
    export_failures_csv,
    export_loo_csv,
    export_matrix_csv,
    export_records_csv,
    failure_summary,
    import_records_csv,
    permutation_histogram,
)

TOOLCHAIN_ENV_VAR = "PHASEFORGE_TOOLCHAIN"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DOMAIN = 2


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_CONFIG):
        super().__init__(message)
        self.code = code


def _load_suite(path: Path) -> list[KernelCase]:
    """Load the kernel suite file; relative paths resolve against its directory."""
    if not path.exists():
        raise CliError(f"suite file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"suite file {path} is not valid JSON: {exc}") from exc
    base = path.parent
    kernels: list[KernelCase] = []
    for raw in data.get("kernels", []):
        try:
            kernel_id = raw["id"]
            if "model" in raw:
                source: object = SimKernelModel.from_json_dict(raw["model"])
            elif "model_path" in raw:
                source = SimKernelModel.load(base / raw["model_path"])
            elif "source" in raw:
                source = base / raw["source"]
            else:
                raise CliError(f"kernel {kernel_id!r} has neither a model nor a source")
            if "ir" in raw:
                ir_text = raw["ir"]
            elif "ir_path" in raw:
                ir_text = (base / raw["ir_path"]).read_text()
            else:
                ir_text = None
            kernels.append(
                KernelCase(
                    id=kernel_id,
                    source=source,
                    validation_input=raw.get("validation_input", "validation"),
                    measurement_input=raw.get("measurement_input", "measurement"),
                    reference_outputs=tuple(raw.get("reference_outputs", ())),
                    ir_text=ir_text,
                )
            )
        except (KeyError, ValueError, OSError) as exc:
            raise CliError(f"bad kernel entry in {path}: {exc}") from exc
    if not kernels:
        raise CliError(f"suite file {path} defines no kernels")
    return kernels


def _select_kernels(kernels: list[KernelCase], ids: list[str]) -> list[KernelCase]:
    if not ids:
        return kernels
    by_id = {k.id: k for k in kernels}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise CliError(f"unknown kernel ids: {missing}")
    return [by_id[i] for i in ids]


def _make_backend(args: argparse.Namespace) -> Backend:
    if args.backend == "simulator":
        return SimulatorBackend()
    # The environment variable overrides a configured --toolchain path.
    spec_path = os.environ.get(TOOLCHAIN_ENV_VAR) or args.toolchain
    if not spec_path:
        raise CliError(
            f"toolchain backend needs --toolchain or ${TOOLCHAIN_ENV_VAR}"
        )
    if not Path(spec_path).exists():
        raise CliError(f"toolchain spec not found: {spec_path}")
    try:
        return ToolchainBackend(ToolchainSpec.load(spec_path))
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CliError(f"bad toolchain spec {spec_path}: {exc}") from exc


def _make_config(args: argparse.Namespace) -> ExplorationConfig:
    try:
        return ExplorationConfig(
            num_sequences=args.num_sequences,
            max_len=args.max_len,
            seed=args.seed,
            top_k=args.top_k,
            final_reps=args.final_reps,
            final_random_inputs=args.final_random_inputs,
            rtol=args.rtol,
            atol=args.atol,
        )
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _kernel_features(kernel: KernelCase):
    if kernel.ir_text is None:
        raise CliError(f"kernel {kernel.id!r} has no IR text for feature extraction")
    try:
        return extract_features(parse_ir(kernel.ir_text))
    except ValueError as exc:
        raise CliError(f"bad IR for kernel {kernel.id!r}: {exc}") from exc


def _load_kb(path: Path) -> KnowledgeBase:
    if not path.exists():
        raise CliError(f"knowledge base not found: {path}")
    try:
        kb = KnowledgeBase.load(path)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CliError(f"bad knowledge base {path}: {exc}") from exc
    if not kb.entries:
        raise CliError(f"knowledge base {path} is empty", EXIT_DOMAIN)
    return kb


def cmd_explore(args: argparse.Namespace) -> int:
    catalog_path = Path(args.catalog)
    if not catalog_path.exists():
        raise CliError(f"catalog file not found: {catalog_path}")
    try:
        catalog = PassCatalog.load(catalog_path)
    except ValueError as exc:
        raise CliError(f"bad catalog {catalog_path}: {exc}") from exc
    if len(catalog) == 0:
        raise CliError(f"catalog {catalog_path} lists no passes")
    kernels = _select_kernels(_load_suite(Path(args.suite)), args.kernels)
    backend = _make_backend(args)
    config = _make_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    kb = KnowledgeBase()
    store = ResultsStore()
    unfinished: list[str] = []
    for kernel in kernels:
        features = _kernel_features(kernel)
        baseline_avg = measure_average(
            backend, kernel, PhaseOrder(), config.final_reps, config
        )
        if baseline_avg is None:
            raise CliError(f"baseline measurement failed for kernel {kernel.id!r}", EXIT_DOMAIN)
        if isinstance(backend, ToolchainBackend):
            backend.set_timeout_override(kernel.id, args.timeout_factor * baseline_avg)

        records = explore(kernel, catalog, config, backend)
        store.extend(records)
        try:
            best_order, _ = finalize(kernel, records, config, backend)
        except NoValidCandidateError as exc:
            print(f"phaseforge: {exc}", file=sys.stderr)
            unfinished.append(kernel.id)
            continue
        reduced = reduce_order(kernel, best_order, backend, args.epsilon, config)
        reduced_avg = measure_average(backend, kernel, reduced, config.final_reps, config)
        if reduced_avg is not None and reduced_avg < baseline_avg:
            entry = KbEntry(reduced, reduced_avg, baseline_avg, features)
        else:
            entry = KbEntry(PhaseOrder(), baseline_avg, baseline_avg, features)
        kb.add(kernel.id, entry)

    export_records_csv(store.records, out_dir / "records.csv")
    kb.save(out_dir / "kb.json")
    if unfinished:
        print(f"phaseforge: no valid candidate for kernels: {unfinished}", file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


def cmd_suggest(args: argparse.Namespace) -> int:
    kb = _load_kb(Path(args.kb))
    kernels = _load_suite(Path(args.suite))
    selected = _select_kernels(kernels, [args.kernel])
    kernel = selected[0]
    refset = ReferenceSet.from_knowledge_base(kb)
    query = _kernel_features(kernel)
    try:
        suggestions = suggest_knn(query, refset, args.k or 3)
    except DegenerateVectorError as exc:
        raise CliError(str(exc), EXIT_DOMAIN) from exc
    for rank, (reference_id, order) in enumerate(suggestions, start=1):
        print(f"{rank}\t{reference_id}\t{render_phase_order(order)}")
    if args.dry_run:
        return EXIT_OK
    backend = _make_backend(args)
    config = _make_config(args)
    curve = evaluate_suggestions(
        kernel, suggestions, backend, len(suggestions), config=config
    )
    for count, speedup in enumerate(curve, start=1):
        print(f"evals={count}\tspeedup={speedup:.4f}")
    return EXIT_OK


def _cmd_cross_apply(args: argparse.Namespace) -> int:
    kb = _load_kb(Path(args.kb))
    kernels = [k for k in _load_suite(Path(args.suite)) if k.id in kb.entries]
    if not kernels:
        raise CliError("no suite kernels with knowledge-base entries", EXIT_DOMAIN)
    backend = _make_backend(args)
    config = _make_config(args)
    matrix = cross_apply(kernels, kb, backend, config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    export_matrix_csv(matrix, out_dir / "matrix.csv")
    return EXIT_OK


def _cmd_permute(args: argparse.Namespace) -> int:
    kb = _load_kb(Path(args.kb))
    kernels = [k for k in _load_suite(Path(args.suite)) if k.id in kb.entries]
    if args.kernel:
        kernels = _select_kernels(kernels, [args.kernel])
    backend = _make_backend(args)
    config = _make_config(args)
    rng = Random(args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows: list[tuple[str, str, str, str]] = []
    for kernel in kernels:
        best_order = kb.entries[kernel.id].best_order
        if len(best_order) == 0:
            continue  # no improving order was found for this kernel
        orders = [best_order]
        for permutation in random_permutations(best_order, args.trials, rng):
            if permutation.passes != best_order.passes:
                orders.append(permutation)
        records = []
        for index, order in enumerate(orders):
            outcome = evaluate_candidate(backend, kernel, order, config)
            records.append(
                EvaluationRecord(
                    kernel.id, order, outcome.digest, outcome.status, outcome.wall_time, index
                )
            )
        histogram = permutation_histogram(records, args.bucket_width)
        for bucket in histogram.buckets:
            rows.append(
                (kernel.id, f"{bucket.low:.6f}", f"{bucket.high:.6f}", f"{bucket.percent:.6f}")
            )
        rows.append((kernel.id, "FAIL", "FAIL", f"{histogram.failure_percent:.6f}"))
    with open(out_dir / "permute.csv", "w", newline="") as handle:
        handle.write("kernel_id,bucket_low,bucket_high,percent\n")
        for kernel_id, low, high, percent in rows:
            handle.write(f"{kernel_id},{low},{high},{percent}\n")
    return EXIT_OK


def _cmd_loo(args: argparse.Namespace) -> int:
    kb = _load_kb(Path(args.kb))
    suite = _load_suite(Path(args.suite))
    by_id = {k.id: k for k in suite}
    missing = [kernel_id for kernel_id in kb.entries if kernel_id not in by_id]
    if missing:
        raise CliError(f"knowledge-base kernels missing from the suite: {missing}")
    kernels = [by_id[kernel_id] for kernel_id in kb.entries]
    refset = ReferenceSet.from_knowledge_base(kb)
    if len(refset.entries) < 2:
        raise CliError("leave-one-out needs at least two reference entries", EXIT_DOMAIN)
    k_max = args.k or len(refset.entries) - 1
    if not 1 <= k_max <= len(refset.entries) - 1:
        raise CliError(f"--k must lie in [1, {len(refset.entries) - 1}] for this knowledge base")
    backend = _make_backend(args)
    config = _make_config(args)
    table = leave_one_out(
        refset, kernels, backend, k_max, trials=args.trials, seed=args.seed, config=config
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    export_loo_csv(table, out_dir / "loo.csv")
    return EXIT_OK


def _cmd_failures(args: argparse.Namespace) -> int:
    records_path = Path(args.records) if args.records else Path(args.out_dir) / "records.csv"
    if not records_path.exists():
        raise CliError(f"records file not found: {records_path}")
    store = ResultsStore()
    try:
        store.extend(import_records_csv(records_path))
    except ValueError as exc:
        raise CliError(f"bad records file {records_path}: {exc}") from exc
    summary = failure_summary(store, args.kernel or None)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    export_failures_csv(summary, out_dir / "failures.csv")
    return EXIT_OK


_EXPERIMENTS = {
    "cross-apply": _cmd_cross_apply,
    "permute": _cmd_permute,
    "loo": _cmd_loo,
    "failures": _cmd_failures,
}


def cmd_experiments(args: argparse.Namespace) -> int:
    return _EXPERIMENTS[args.experiment](args)


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--backend", choices=["simulator", "toolchain"], default="simulator")
    parser.add_argument("--suite", required=True, help="kernel suite JSON file")
    parser.add_argument("--toolchain", help=f"toolchain spec JSON (or ${TOOLCHAIN_ENV_VAR})")
    parser.add_argument("--out-dir", default="phaseforge-out")
    parser.add_argument("--seed", type=int, default=1729)
    parser.add_argument("--num-sequences", type=int, default=10000)
    parser.add_argument("--max-len", type=int, default=256)
    parser.add_argument("--top-k", type=int, default=10)
    parser.add_argument("--final-reps", type=int, default=30)
    parser.add_argument("--final-random-inputs", type=int, default=30)
    parser.add_argument("--rtol", type=float, default=0.01)
    parser.add_argument("--atol", type=float, default=1e-6)
    parser.add_argument("--epsilon", type=float, default=0.01)
    parser.add_argument("--timeout-factor", type=float, default=4.0)
    parser.add_argument("--trials", type=int, default=1000)
    parser.add_argument("--k", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phaseforge",
        description="Compiler phase-ordering autotuner and sequence recommender",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    explore_p = sub.add_parser("explore", help="run exploration and build the knowledge base")
    explore_p.add_argument("kernels", nargs="*", help="kernel ids (default: all in the suite)")
    explore_p.add_argument("--catalog", required=True, help="pass catalog file")
    _add_common_flags(explore_p)
    explore_p.set_defaults(func=cmd_explore)

    suggest_p = sub.add_parser("suggest", help="suggest phase orders for a kernel")
    suggest_p.add_argument("kernel", help="kernel id")
    suggest_p.add_argument("--kb", required=True, help="knowledge base JSON")
    suggest_p.add_argument("--dry-run", action="store_true", help="print suggestions only")
    _add_common_flags(suggest_p)
    suggest_p.set_defaults(func=cmd_suggest)

    exp_p = sub.add_parser("experiments", help="cross-apply, permute, loo, failures reports")
    exp_p.add_argument("experiment", choices=sorted(_EXPERIMENTS))
    exp_p.add_argument("--kb", help="knowledge base JSON")
    exp_p.add_argument("--kernel", help="restrict to one kernel")
    exp_p.add_argument("--records", help="records CSV for the failures report")
    exp_p.add_argument("--bucket-width", type=float, default=0.05)
    _add_common_flags(exp_p)
    exp_p.set_defaults(func=cmd_experiments)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors; we reserve 2
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    if getattr(args, "command", None) == "experiments":
        if args.experiment in ("cross-apply", "permute", "loo") and not args.kb:
            print("phaseforge: --kb is required for this experiment", file=sys.stderr)
            return EXIT_CONFIG
    try:
        return args.func(args)
    except CliError as exc:
        print(f"phaseforge: {exc}", file=sys.stderr)
        return exc.code
    except (NoValidCandidateError, DegenerateVectorError) as exc:
        print(f"phaseforge: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except BackendError as exc:
        print(f"phaseforge: backend error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (OSError, ValueError) as exc:
        print(f"phaseforge: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def entrypoint() -> None:
    raise SystemExit(main())
