"""Causal discovery for sparse linear cyclic models with hidden
confounders: simulation, total-effect estimation, constraint-loss graph
search, and the benchmark harness tying them together."""

from .bench import (
    BenchConfig,
    BenchResult,
    CellResult,
    accuracy,
    auc_roc,
    emit_report,
    profile_config,
    run_benchmark,
    weak_baseline,
)
from .citest import (
    CiConstraint,
    ConstraintSet,
    ci_test,
    constraint_weight,
    enumerate_constraints,
    oracle_constraints,
    partial_correlation,
)
from .features import Feature, FeatureScoreTable, feature_space, truth_features
from .graphs import (
    DirectedMixedGraph,
    SeparationQuery,
    Walk,
    WalkStep,
    acyclify,
    d_separated,
    has_directed_cycle,
    intervene_graph,
    is_collider,
    sigma_separated,
    strongly_connected_components,
)
from .llc import (
    LlcConfig,
    LlcSystem,
    TotalEffects,
    assemble_system,
    covariance_condition,
    estimate_noise_covariance,
    estimate_total_effects,
    faithfulness_constraints,
    llc_discover,
    pair_condition,
    solve_penalized,
)
from .scm import (
    Dataset,
    Experiment,
    LinearScm,
    ScmSamplerConfig,
    analytic_covariance,
    experiment_setup,
    graph_of,
    is_weakly_stable,
    sample_data,
    sample_random_scm,
)
from .search import (
    D_SEP,
    SIGMA_SEP,
    SearchConfig,
    SearchResult,
    asp_discover,
    ensemble_predict,
    feature_confidence,
    graph_loss,
    minimize_loss,
)

__version__ = "0.1.0"
