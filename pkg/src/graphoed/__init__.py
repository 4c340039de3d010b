"""A-optimal active learning on graph-Laplacian regularized pseudo-labels.

The package labels a pool dataset from a handful of oracle answers: a
symmetrized kNN graph regularizes least-squares label scores, and the next
points to label are chosen to shrink the estimated recovery error (or the
posterior-covariance trace).  The loop runs either as a batch CLI with a
simulated oracle or as an HTTP session service for a human labeler.
"""

from .active_loop import (
    Hyperparams,
    InteractiveOracle,
    LoopConfig,
    LoopRunner,
    SimulatedOracle,
    baseline_select,
    clustering_accuracy,
    initialize,
    load_loop_config,
    run_loop,
)
from .data_io import Dataset, RunRecord, load_csv, load_idx_mnist, make_blobs_2d, pca_reduce
from .design import (
    DesignObjectiveEval,
    SelectionBatch,
    bayesian_design,
    eval_bayesian,
    eval_frequentist,
    select_batch,
)
from .errors import ConfigError, DataError, DesignError, GraphoedError, SolverError
from .estimator import (
    DesignState,
    LabelEstimate,
    attach_uncertainty,
    estimate_labels,
    expected_error,
)
from .graph import NeighborGraph, build_knn_graph, build_laplacian, build_regularizer
from .sparse_linalg import (
    ProbeSet,
    SolverHandle,
    dense_oracle,
    estimate_diag_inverse,
    estimate_trace_inverse,
)

__version__ = "0.1.0"
