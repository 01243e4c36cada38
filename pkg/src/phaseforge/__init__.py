"""phaseforge: compiler phase-ordering autotuner and sequence recommender."""

from .advisor import (
    PassTransitionGraph,
    ReferenceEntry,
    ReferenceSet,
    build_transition_graph,
    evaluate_suggestions,
    leave_one_out,
    random_baseline,
    sample_transition_graph,
    suggest_knn,
)
from .backend import (
    Artifact,
    Backend,
    BackendError,
    CompileOutcome,
    CompileStatus,
    ExecutionOutcome,
    ExecutionStatus,
    InputKind,
    KernelCase,
    Motif,
    SimKernelModel,
    SimulatorBackend,
    ToolchainBackend,
    ToolchainSpec,
    sim_evaluate,
)
from .catalog import (
    PassCatalog,
    PassId,
    PhaseOrder,
    PhaseOrderParseError,
    parse_phase_order,
    random_permutations,
    random_phase_order,
    render_phase_order,
)
from .explorer import (
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
    reduce_order,
)
from .irfeat import (
    DegenerateVectorError,
    FeatureVector,
    IrParseError,
    cosine_distance,
    extract_features,
    parse_ir,
)
from .results import (
    ResultsStore,
    SpeedupReport,
    build_speedup_report,
    failure_summary,
    geometric_mean,
    permutation_histogram,
)

__version__ = "0.1.0"
