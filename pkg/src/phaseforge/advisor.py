"""Phase-order suggestion for unseen kernels: kNN over cosine distance, the
random-selection baseline, and a weighted pass-transition graph sampled by
random walk, with a leave-one-out evaluation harness."""

from __future__ import annotations

import math
from dataclasses import dataclass
from random import Random

from .backend.types import Backend, BackendError, KernelCase
from .catalog import PassId, PhaseOrder, render_phase_order
from .explorer import (
    ExplorationConfig,
    KnowledgeBase,
    RecordStatus,
    evaluate_candidate,
)
from .irfeat import FeatureVector, cosine_distance

START = None  # distinguished transition-graph source node


@dataclass(frozen=True)
class ReferenceEntry:
    kernel_id: str
    features: FeatureVector
    best_order: PhaseOrder


@dataclass(frozen=True)
class ReferenceSet:
    """Ordered reference kernels with their features and best-found orders."""

    entries: tuple[ReferenceEntry, ...]

    def __post_init__(self) -> None:
        ids = [e.kernel_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("reference kernel ids must be unique")
        for entry in self.entries:
            if entry.features.norm() == 0.0:
                raise ValueError(
                    f"reference entry {entry.kernel_id!r} has an all-zero feature vector"
                )

    @classmethod
    def from_knowledge_base(cls, kb: KnowledgeBase) -> ReferenceSet:
        return cls(
            tuple(
                ReferenceEntry(kernel_id, entry.feature_vector, entry.best_order)
                for kernel_id, entry in kb.entries.items()
            )
        )

    def without(self, kernel_id: str) -> ReferenceSet:
        return ReferenceSet(tuple(e for e in self.entries if e.kernel_id != kernel_id))

    def find(self, kernel_id: str) -> ReferenceEntry:
        for entry in self.entries:
            if entry.kernel_id == kernel_id:
                return entry
        raise KeyError(kernel_id)


def suggest_knn(
    query: FeatureVector, refset: ReferenceSet, k: int
) -> list[tuple[str, PhaseOrder]]:
    """The best orders of the k reference kernels nearest to the query.

    Entries are ranked by ascending cosine distance with ties broken by
    reference insertion order; duplicate orders are dropped keeping the
    earliest, so fewer than k suggestions may come back.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not refset.entries:
        raise ValueError("reference set is empty")
    ranked = sorted(
        enumerate(refset.entries),
        key=lambda pair: (cosine_distance(query, pair[1].features), pair[0]),
    )
    suggestions: list[tuple[str, PhaseOrder]] = []
    seen_orders: set[tuple[PassId, ...]] = set()
    for _, entry in ranked[: min(k, len(refset.entries))]:
        if entry.best_order.passes in seen_orders:
            continue
        seen_orders.add(entry.best_order.passes)
        suggestions.append((entry.kernel_id, entry.best_order))
    return suggestions


FitnessCache = dict[str, tuple[bool, float | None]]


def _order_fitness(
    kernel: KernelCase,
    order: PhaseOrder,
    backend: Backend,
    config: ExplorationConfig,
    cache: FitnessCache,
) -> tuple[bool, float | None]:
    key = render_phase_order(order)
    if key not in cache:
        outcome = evaluate_candidate(backend, kernel, order, config)
        cache[key] = (outcome.status is RecordStatus.VALID, outcome.wall_time)
    return cache[key]


def _baseline_time(
    kernel: KernelCase, backend: Backend, config: ExplorationConfig, cache: FitnessCache
) -> float:
    valid, wall_time = _order_fitness(kernel, PhaseOrder(), backend, config, cache)
    if not valid:
        raise BackendError(f"baseline evaluation failed for kernel {kernel.id!r}")
    return wall_time


def evaluate_suggestions(
    kernel: KernelCase,
    suggestions: list[tuple[str, PhaseOrder]],
    backend: Backend,
    max_evals: int,
    config: ExplorationConfig | None = None,
    cache: FitnessCache | None = None,
    baseline_time: float | None = None,
) -> list[float]:
    """Best-so-far speedup over the unoptimized baseline after each of
    ``max_evals`` suggestion evaluations, floored at 1.0 by the fallback.

    Repeated orders recall their cached fitness instead of re-evaluating; when
    the suggestions run out early the curve continues flat.
    """
    if not suggestions:
        raise ValueError("no suggestions to evaluate")
    if max_evals < 1:
        raise ValueError(f"max_evals must be >= 1, got {max_evals}")
    config = config or ExplorationConfig()
    cache = cache if cache is not None else {}
    if baseline_time is None:
        baseline_time = _baseline_time(kernel, backend, config, cache)
    best = 1.0
    curve: list[float] = []
    for _, order in suggestions[:max_evals]:
        valid, wall_time = _order_fitness(kernel, order, backend, config, cache)
        if valid:
            best = max(best, baseline_time / wall_time)
        curve.append(best)
    while len(curve) < max_evals:
        curve.append(best)
    return curve


def random_baseline(
    refset: ReferenceSet,
    kernel: KernelCase,
    k: int,
    trials: int,
    backend: Backend,
    rng: Random,
    config: ExplorationConfig | None = None,
    cache: FitnessCache | None = None,
) -> list[float]:
    """Geometric-mean speedup curve over trials of evaluating k reference
    orders sampled uniformly without replacement."""
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if k < 1 or k > len(refset.entries):
        raise ValueError(f"k must lie in [1, {len(refset.entries)}], got {k}")
    config = config or ExplorationConfig()
    cache = cache if cache is not None else {}
    baseline = _baseline_time(kernel, backend, config, cache)
    log_sums = [0.0] * k
    for _ in range(trials):
        picks = rng.sample(refset.entries, k)
        curve = evaluate_suggestions(
            kernel,
            [(e.kernel_id, e.best_order) for e in picks],
            backend,
            k,
            config=config,
            cache=cache,
            baseline_time=baseline,
        )
        for index, value in enumerate(curve):
            log_sums[index] += math.log(value)
    return [math.exp(total / trials) for total in log_sums]


@dataclass(frozen=True)
class PassTransitionGraph:
    """Weighted graph of favorable pass-to-pass transitions built from
    reference orders; new orders are generated by weight-proportional random
    walks from the START node."""

    edges: dict[PassId | None, tuple[tuple[PassId, int], ...]]
    length_samples: tuple[int, ...]

    def __post_init__(self) -> None:
        for source, successors in self.edges.items():
            for _, weight in successors:
                if weight < 1:
                    raise ValueError(f"edge weight from {source} must be >= 1")
        reachable: set[PassId | None] = {START}
        frontier = [START]
        while frontier:
            node = frontier.pop()
            for successor, _ in self.edges.get(node, ()):
                if successor not in reachable:
                    reachable.add(successor)
                    frontier.append(successor)
        nodes = set(self.edges) | {
            successor for succs in self.edges.values() for successor, _ in succs
        }
        unreachable = {n for n in nodes if n not in reachable}
        if unreachable:
            raise ValueError(f"nodes unreachable from START: {sorted(str(n) for n in unreachable)}")

    def total_edge_weight(self) -> int:
        return sum(w for succs in self.edges.values() for _, w in succs)


def build_transition_graph(
    refset: ReferenceSet, leave_out: str | None = None
) -> PassTransitionGraph:
    """Count START->first and adjacent-pass transitions across the reference
    orders, excluding ``leave_out``'s own entry. Empty orders contribute
    nothing."""
    counts: dict[PassId | None, dict[PassId, int]] = {}
    lengths: list[int] = []
    for entry in refset.entries:
        if entry.kernel_id == leave_out:
            continue
        passes = entry.best_order.passes
        if not passes:
            continue
        lengths.append(len(passes))
        counts.setdefault(START, {})
        counts[START][passes[0]] = counts[START].get(passes[0], 0) + 1
        for left, right in zip(passes, passes[1:]):
            counts.setdefault(left, {})
            counts[left][right] = counts[left].get(right, 0) + 1
    edges = {
        source: tuple(sorted(successors.items()))
        for source, successors in counts.items()
    }
    return PassTransitionGraph(edges=edges, length_samples=tuple(lengths))


def sample_transition_graph(graph: PassTransitionGraph, rng: Random) -> PhaseOrder:
    """Random walk from START with successor probability proportional to edge
    weight; stops at a length drawn from the reference lengths, or earlier at
    a node without out-edges."""
    if not graph.length_samples:
        return PhaseOrder()
    target_length = rng.choice(graph.length_samples)
    walk: list[PassId] = []
    node: PassId | None = START
    while len(walk) < target_length:
        successors = graph.edges.get(node, ())
        if not successors:
            break
        choices = [s for s, _ in successors]
        weights = [w for _, w in successors]
        node = rng.choices(choices, weights=weights, k=1)[0]
        walk.append(node)
    return PhaseOrder(tuple(walk))


LOO_METHODS = ("knn", "random", "transition-graph")


def leave_one_out(
    refset: ReferenceSet,
    kernels: list[KernelCase],
    backend: Backend,
    k_max: int,
    trials: int = 1000,
    seed: int = 0,
    config: ExplorationConfig | None = None,
) -> dict[str, list[float]]:
    """For each kernel, exclude its own reference entry and run all three
    suggestion methods for 1..k_max evaluations; aggregate per-method
    geometric means across kernels. Sampling-based methods (random selection
    and graph walks) are themselves averaged over ``trials`` repetitions."""
    if k_max < 1:
        raise ValueError(f"k_max must be >= 1, got {k_max}")
    if not kernels:
        raise ValueError("no kernels to evaluate")
    config = config or ExplorationConfig()
    log_sums = {method: [0.0] * k_max for method in LOO_METHODS}
    for kernel in kernels:
        query = refset.find(kernel.id).features
        subset = refset.without(kernel.id)
        if not subset.entries:
            raise ValueError("leave-one-out requires at least two reference entries")
        cache: FitnessCache = {}
        baseline = _baseline_time(kernel, backend, config, cache)

        knn_curve = evaluate_suggestions(
            kernel,
            suggest_knn(query, subset, k_max),
            backend,
            k_max,
            config=config,
            cache=cache,
            baseline_time=baseline,
        )

        random_curve = random_baseline(
            subset,
            kernel,
            min(k_max, len(subset.entries)),
            trials,
            backend,
            Random(f"{seed}:{kernel.id}:random"),
            config=config,
            cache=cache,
        )
        while len(random_curve) < k_max:
            random_curve.append(random_curve[-1])

        graph = build_transition_graph(refset, leave_out=kernel.id)
        graph_rng = Random(f"{seed}:{kernel.id}:graph")
        graph_logs = [0.0] * k_max
        for _ in range(trials):
            walks = [
                ("", sample_transition_graph(graph, graph_rng)) for _ in range(k_max)
            ]
            curve = evaluate_suggestions(
                kernel,
                walks,
                backend,
                k_max,
                config=config,
                cache=cache,
                baseline_time=baseline,
            )
            for index, value in enumerate(curve):
                graph_logs[index] += math.log(value)
        graph_curve = [math.exp(total / trials) for total in graph_logs]

        for method, curve in (
            ("knn", knn_curve),
            ("random", random_curve),
            ("transition-graph", graph_curve),
        ):
            for index, value in enumerate(curve):
                log_sums[method][index] += math.log(value)
    return {
        method: [math.exp(total / len(kernels)) for total in totals]
        for method, totals in log_sums.items()
    }
