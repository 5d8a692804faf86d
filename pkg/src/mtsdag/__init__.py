"""Multiscale-entropy mirror descent for metrical task systems on marked DAGs."""

from .compression import CompressionResult, classify_edges, compress, sigma_counts
from .dag import (
    DagValidationError,
    MarkedDag,
    PathCapError,
    dag_dist,
    lambda_map,
    load_dag,
    save_dag,
    unfold_to_tree,
    validate,
    w1_dag_exact,
)
from .engine import (
    EngineState,
    ProjectionOutcome,
    RunTrace,
    StepRecord,
    epsilon_dag,
    global_divergence,
    node_project,
    run,
    step,
    substep,
    verify_step_inequalities,
)
from .metric import MetricError, MetricSpace, emd_exact, validate_and_normalize
from .nets import NetDag, build_hierarchical_dag, build_net_dag, net_hierarchy
from .offline import comparator_flows, comparator_lipschitz, offline_opt

__version__ = "0.1.0"
