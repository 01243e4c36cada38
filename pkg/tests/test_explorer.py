from random import Random

import pytest

from phaseforge.backend.simulator import Motif, SimKernelModel, SimulatorBackend, sim_evaluate
from phaseforge.backend.types import ExecutionStatus, InputKind
from phaseforge.catalog import PassCatalog, PhaseOrder
from phaseforge.explorer import (
    EvaluationRecord,
    ExplorationConfig,
    KbEntry,
    KnowledgeBase,
    NoValidCandidateError,
    RecordStatus,
    compare_outputs,
    cross_apply,
    evaluate_candidate,
    explore,
    finalize,
    measure_average,
    reduce_order,
)
from phaseforge.irfeat import FEATURE_COUNT, FeatureVector

from conftest import sim_kernel


def small_config(**overrides) -> ExplorationConfig:
    defaults = dict(
        num_sequences=50,
        max_len=4,
        seed=7,
        top_k=5,
        final_reps=3,
        final_random_inputs=3,
    )
    defaults.update(overrides)
    return ExplorationConfig(**defaults)


def features(*values) -> FeatureVector:
    padded = list(values) + [0.0] * (FEATURE_COUNT - len(values))
    return FeatureVector(tuple(padded))


# -- compare_outputs ----------------------------------------------------------


def test_compare_within_one_percent():
    assert compare_outputs([1.0, 2.0], [1.005, 2.0], rtol=0.01, atol=1e-6)


def test_compare_beyond_one_percent():
    assert not compare_outputs([1.0, 2.0], [1.02, 2.0], rtol=0.01, atol=1e-6)


def test_compare_absolute_tolerance_at_zero():
    assert compare_outputs([0.0], [1e-7], rtol=0.01, atol=1e-6)


def test_compare_length_mismatch():
    assert not compare_outputs([1.0], [1.0, 1.0], rtol=0.01, atol=1e-6)


def test_compare_against_brute_force_oracle():
    def oracle(ref, cand, rtol, atol):
        if len(ref) != len(cand):
            return False
        for i in range(len(ref)):
            if abs(cand[i] - ref[i]) > max(atol, rtol * abs(ref[i])):
                return False
        return True

    rng = Random(31337)
    disagreements = 0
    for _ in range(1000):
        n = rng.randint(0, 6)
        ref = [rng.uniform(-10, 10) if rng.random() > 0.2 else 0.0 for _ in range(n)]
        cand = [
            r * (1 + rng.choice([-1, 1]) * rng.choice([0.0, 0.005, 0.01, 0.0100001, 0.02]))
            + rng.choice([0.0, 0.0, 1e-7, 2e-6])
            for r in ref
        ]
        if rng.random() < 0.1 and cand:
            cand.append(0.0)
        rtol = rng.choice([0.0, 0.01, 0.05])
        atol = rng.choice([0.0, 1e-6, 1e-3])
        if compare_outputs(ref, cand, rtol, atol) != oracle(ref, cand, rtol, atol):
            disagreements += 1
    assert disagreements == 0


# -- explore ------------------------------------------------------------------


def test_explore_requires_reference_outputs():
    kernel = sim_kernel(reference_outputs=())
    with pytest.raises(ValueError, match="reference outputs"):
        explore(kernel, PassCatalog.of("a"), small_config(), SimulatorBackend())


def test_explore_single_candidate_speedup_one():
    kernel = sim_kernel()
    backend = SimulatorBackend()
    config = small_config(num_sequences=1, max_len=1)
    records = explore(kernel, PassCatalog.of("a"), config, backend)
    assert len(records) == 1
    record = records[0]
    assert record.status is RecordStatus.VALID
    baseline = evaluate_candidate(backend, kernel, PhaseOrder(), config).wall_time
    assert baseline / record.wall_time == pytest.approx(1.0, rel=0.005)


def test_explore_finds_planted_motif():
    motif = Motif.of(["licm", "gvn"], 0.5)
    kernel = sim_kernel(motifs=(motif,))
    catalog = PassCatalog.of("licm", "gvn", "sroa", "dse", "sink")
    config = small_config(num_sequences=2000, max_len=6, seed=3)
    records = explore(kernel, catalog, config, SimulatorBackend())
    best = records[0]
    assert best.status in (RecordStatus.VALID, RecordStatus.REUSED)
    window = [best.order.passes[i:i + 2] for i in range(len(best.order) - 1)]
    assert motif.passes in window
    assert best.wall_time == pytest.approx(0.5, rel=0.01)


def test_explore_is_seed_deterministic():
    kernel = sim_kernel(failure_rates=(0.05, 0.1, 0.1), seed_salt=12)
    catalog = PassCatalog.of("a", "b", "c")
    config = small_config(num_sequences=300, seed=99)
    backend = SimulatorBackend()
    assert explore(kernel, catalog, config, backend) == explore(
        kernel, catalog, config, backend
    )


def test_explore_dedups_by_artifact_digest():
    kernel = sim_kernel(noop_passes=frozenset({"n1", "n2"}))
    catalog = PassCatalog.of("a", "b", "n1", "n2")
    records = explore(
        kernel, catalog, small_config(num_sequences=300), SimulatorBackend()
    )
    fresh = [r for r in records if r.status not in (RecordStatus.REUSED, RecordStatus.NO_IR)]
    reused = [r for r in records if r.status is RecordStatus.REUSED]
    assert reused, "expected digest collisions in a tiny search space"
    digests = [r.artifact_digest for r in fresh]
    assert len(digests) == len(set(digests))
    by_digest = {r.artifact_digest: r for r in fresh}
    for record in reused:
        assert record.wall_time == by_digest[record.artifact_digest].wall_time


def test_explore_sorts_valid_ascending_failures_last():
    kernel = sim_kernel(failure_rates=(0.1, 0.15, 0.15), seed_salt=2)
    catalog = PassCatalog.of("a", "b", "c")
    records = explore(
        kernel, catalog, small_config(num_sequences=400, seed=5), SimulatorBackend()
    )
    statuses = [r.status for r in records]
    assert RecordStatus.NO_IR in statuses and RecordStatus.VALID in statuses

    def resolved_valid(record):
        if record.status is RecordStatus.VALID:
            return True
        if record.status is RecordStatus.REUSED:
            fresh = next(
                r
                for r in records
                if r.artifact_digest == record.artifact_digest
                and r.status is not RecordStatus.REUSED
            )
            return fresh.status is RecordStatus.VALID
        return False

    flags = [resolved_valid(r) for r in records]
    boundary = flags.index(False) if False in flags else len(records)
    assert all(flags[:boundary]) and not any(flags[boundary:])
    valid_times = [r.wall_time for r in records[:boundary]]
    assert valid_times == sorted(valid_times)
    failure_indices = [r.eval_index for r in records[boundary:]]
    assert failure_indices == sorted(failure_indices)


# -- finalize -----------------------------------------------------------------


def test_finalize_single_valid_candidate():
    kernel = sim_kernel()
    backend = SimulatorBackend()
    config = small_config(num_sequences=5, top_k=1)
    records = explore(kernel, PassCatalog.of("a", "b"), config, backend)
    best_order, averaged = finalize(kernel, records, config, backend)
    assert best_order == records[0].order
    assert averaged == pytest.approx(records[0].wall_time)


def test_finalize_skips_candidate_failing_random_input_validation():
    # The fastest motif is planted to break on freshly generated inputs.
    fast = Motif.of(["fast"], 0.4)
    good = Motif.of(["good"], 0.6)
    kernel = sim_kernel(
        motifs=(fast, good),
        latent_motifs=(fast.passes,),
    )
    backend = SimulatorBackend()
    catalog = PassCatalog.of("fast", "good")
    config = small_config(num_sequences=100, max_len=2, top_k=10)
    records = explore(kernel, catalog, config, backend)
    rank_one = records[0]
    assert any(p.name == "fast" for p in rank_one.order)
    best_order, averaged = finalize(kernel, records, config, backend)
    assert all(p.name != "fast" for p in best_order)
    assert any(p.name == "good" for p in best_order)
    assert averaged == pytest.approx(0.6, rel=0.01)


def test_finalize_raises_when_everything_fails():
    kernel = sim_kernel(
        motifs=(Motif.of(["a"], 0.5),),
        latent_motifs=((PhaseOrder.of("a").passes[0],),),
    )
    backend = SimulatorBackend()
    config = small_config(num_sequences=20, max_len=2, top_k=3)
    records = explore(kernel, PassCatalog.of("a"), config, backend)
    with pytest.raises(NoValidCandidateError):
        finalize(kernel, records, config, backend)


def test_finalize_average_matches_single_simulator_measurement():
    kernel = sim_kernel(motifs=(Motif.of(["licm"], 0.5),))
    backend = SimulatorBackend()
    config = small_config(num_sequences=60, max_len=2, final_reps=7)
    records = explore(kernel, PassCatalog.of("licm", "gvn"), config, backend)
    _, averaged = finalize(kernel, records, config, backend)
    # The simulator is replay-deterministic, so the 7-run average equals one run.
    assert averaged == pytest.approx(records[0].wall_time)


# -- reduce_order -------------------------------------------------------------


def test_reduce_drops_registered_noop():
    kernel = sim_kernel(
        motifs=(Motif.of(["licm"], 0.5),), noop_passes=frozenset({"noop"})
    )
    reduced = reduce_order(
        kernel, PhaseOrder.of("noop", "licm"), SimulatorBackend(), config=small_config()
    )
    assert reduced == PhaseOrder.of("licm")


def test_reduce_empty_order():
    kernel = sim_kernel()
    assert reduce_order(kernel, PhaseOrder(), SimulatorBackend()) == PhaseOrder()


def test_reduce_keeps_fully_participating_order():
    kernel = sim_kernel(motifs=(Motif.of(["a", "b"], 0.5),))
    order = PhaseOrder.of("a", "b")
    assert reduce_order(kernel, order, SimulatorBackend(), config=small_config()) == order


def test_reduce_rejects_invalid_input_order():
    kernel = sim_kernel(failure_rates=(0.9, 0.0, 0.0), seed_salt=0)
    _, execution = sim_evaluate(kernel.source, PhaseOrder.of("a", "b"))
    if execution is not None:
        pytest.skip("order unexpectedly compiled; pick a different salt")
    with pytest.raises(ValueError, match="must validate"):
        reduce_order(kernel, PhaseOrder.of("a", "b"), SimulatorBackend())


def is_subsequence(short, long):
    it = iter(long)
    return all(item in it for item in short)


def test_reduce_soundness_properties():
    kernel = sim_kernel(motifs=(Motif.of(["licm", "gvn"], 0.5),))
    backend = SimulatorBackend()
    config = small_config()
    catalog = PassCatalog.of("licm", "gvn", "dse", "sroa")
    rng = Random(17)
    epsilon = 0.01
    from phaseforge.catalog import random_phase_order

    checked = 0
    for _ in range(30):
        order = random_phase_order(catalog, 6, rng)
        original = evaluate_candidate(backend, kernel, order, config)
        if original.status is not RecordStatus.VALID:
            continue
        reduced = reduce_order(kernel, order, backend, epsilon, config)
        outcome = evaluate_candidate(backend, kernel, reduced, config)
        assert outcome.status is RecordStatus.VALID
        assert outcome.wall_time <= (1 + epsilon) * original.wall_time
        assert is_subsequence(reduced.passes, order.passes)
        checked += 1
    assert checked >= 20


# -- cross_apply --------------------------------------------------------------


def make_kb_entry(backend, kernel, order, config) -> KbEntry:
    best = evaluate_candidate(backend, kernel, order, config)
    baseline = evaluate_candidate(backend, kernel, PhaseOrder(), config)
    return KbEntry(
        best_order=order,
        best_time=best.wall_time,
        baseline_time=baseline.wall_time,
        feature_vector=features(1.0, 1.0),
    )


def test_cross_apply_diagonal_and_disjoint_motifs():
    backend = SimulatorBackend()
    config = small_config()
    k1 = sim_kernel("k1", motifs=(Motif.of(["m1"], 0.5),), seed_salt=1)
    k2 = sim_kernel("k2", motifs=(Motif.of(["m2"], 0.5),), seed_salt=2)
    kb = KnowledgeBase()
    kb.add("k1", make_kb_entry(backend, k1, PhaseOrder.of("m1"), config))
    kb.add("k2", make_kb_entry(backend, k2, PhaseOrder.of("m2"), config))
    matrix = cross_apply([k1, k2], kb, backend, config)
    assert matrix.cells[("k1", "k1")].ratio == pytest.approx(1.0)
    assert matrix.cells[("k2", "k2")].ratio == pytest.approx(1.0)
    assert matrix.cells[("k1", "k1")].ratio >= 0.95
    # Disjoint motifs: the other kernel's order gives no improvement there.
    assert matrix.cells[("k1", "k2")].ratio == pytest.approx(0.5, rel=0.01)
    assert matrix.cells[("k2", "k1")].ratio == pytest.approx(0.5, rel=0.01)


def test_cross_apply_marks_validation_failures():
    backend = SimulatorBackend()
    config = small_config()
    k1 = sim_kernel("k1", motifs=(Motif.of(["m1"], 0.5),), seed_salt=1)
    order = PhaseOrder.of("m1")
    # Find a salt where k2's baseline is valid but k1's best order misvalidates.
    chosen = None
    for salt in range(500):
        model = SimKernelModel(
            baseline_time=1.0, failure_rates=(0.0, 0.4, 0.0), seed_salt=salt,
            noise_amplitude=0.002,
        )
        _, empty_exec = sim_evaluate(model, PhaseOrder())
        _, order_exec = sim_evaluate(model, order)
        if (
            empty_exec is not None
            and empty_exec.status is ExecutionStatus.VALID
            and order_exec is not None
            and order_exec.status is ExecutionStatus.INVALID_OUTPUT
        ):
            chosen = salt
            break
    assert chosen is not None
    k2 = sim_kernel("k2", failure_rates=(0.0, 0.4, 0.0), seed_salt=chosen)
    kb = KnowledgeBase()
    kb.add("k1", make_kb_entry(backend, k1, order, config))
    kb.add("k2", make_kb_entry(backend, k2, PhaseOrder(), config))
    matrix = cross_apply([k1, k2], kb, backend, config)
    cell = matrix.cells[("k1", "k2")]
    assert cell.failed and cell.ratio is None


def test_cross_apply_requires_entries():
    kernel = sim_kernel("k1")
    with pytest.raises(ValueError, match="no entry"):
        cross_apply([kernel], KnowledgeBase(), SimulatorBackend(), small_config())


# -- KnowledgeBase ------------------------------------------------------------


def test_kb_round_trip(tmp_path):
    kb = KnowledgeBase()
    kb.add(
        "mvt",
        KbEntry(
            best_order=PhaseOrder.of("gvn", "loop-reduce"),
            best_time=0.5,
            baseline_time=1.0,
            feature_vector=features(1.0, 2.0, 3.0),
        ),
    )
    path = tmp_path / "kb.json"
    kb.save(path)
    loaded = KnowledgeBase.load(path)
    assert loaded.entries == kb.entries


def test_kb_entry_rejects_slower_best():
    with pytest.raises(ValueError, match="no-improvement"):
        KbEntry(
            best_order=PhaseOrder.of("gvn"),
            best_time=2.0,
            baseline_time=1.0,
            feature_vector=features(1.0),
        )
    # Empty order marks no improvement; equal times are fine.
    KbEntry(
        best_order=PhaseOrder(),
        best_time=1.0,
        baseline_time=1.0,
        feature_vector=features(1.0),
    )


def test_measure_average_returns_none_on_failure():
    kernel = sim_kernel(failure_rates=(0.9, 0.0, 0.0), seed_salt=0)
    result = measure_average(
        SimulatorBackend(), kernel, PhaseOrder.of("zz"), 3, small_config()
    )
    _, execution = sim_evaluate(kernel.source, PhaseOrder.of("zz"))
    if execution is None:
        assert result is None
    else:
        assert result is not None


def test_evaluation_record_invariants():
    with pytest.raises(ValueError):
        EvaluationRecord("k", PhaseOrder(), "d", RecordStatus.VALID, None, 0)
    with pytest.raises(ValueError):
        EvaluationRecord("k", PhaseOrder(), "d", RecordStatus.NO_IR, None, 0)


def test_validation_input_never_timed_measurement_never_validated():
    """The record's wall time comes from the measurement run even when the
    validation run would report a different time."""

    class SplitBackend(SimulatorBackend):
        def execute(self, kernel, order, artifact, input_kind, random_input_index=None):
            outcome = super().execute(kernel, order, artifact, input_kind, random_input_index)
            if input_kind is InputKind.VALIDATION and outcome.wall_time is not None:
                # Validation inputs are small and fast; a tenth of the time.
                from dataclasses import replace

                return replace(outcome, wall_time=outcome.wall_time / 10.0)
            return outcome

    kernel = sim_kernel()
    backend = SplitBackend()
    outcome = evaluate_candidate(backend, kernel, PhaseOrder.of("a"), small_config())
    assert outcome.status is RecordStatus.VALID
    assert outcome.wall_time == pytest.approx(1.0, rel=0.01)
