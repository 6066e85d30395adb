"""Bayesian nonparametric classification of sparse longitudinal profiles.

A Dirichlet-process mixture of sigmoid trajectory models with disease
labels, fit by truncated stick-breaking MCMC; model-averaged disease
prediction; partition estimation from the posterior co-clustering
matrix; and a simulation harness for replicate studies.
"""

__version__ = "0.1.0"

from .model import (                                   # noqa: F401
    BaseMeasureHyper,
    ClusterParams,
    DependenceParams,
    ModelState,
    ObservationBlocks,
    Patient,
    TrajectoryParams,
    build_covariance,
    data_loglik,
    eval_trajectory,
    patient_loglik,
    stick_breaking_weights,
)
from .mcmc import (                                    # noqa: F401
    AdaptiveRW,
    PosteriorTrace,
    PriorSpec,
    SamplerConfig,
    TwoComponentState,
    TwoComponentTrace,
    run_chain,
    run_conditional_chain,
    run_two_component,
    select_truncation,
)
from .prediction import (                              # noqa: F401
    PredictionResult,
    best_threshold,
    bma_predict,
    bma_predict_many,
    classify,
    predict_draw,
    prediction_matrix,
    roc_auc,
)
from .partition import (                               # noqa: F401
    CoclusteringMatrix,
    Dendrogram,
    PartitionEstimate,
    agglomerate,
    coclustering,
    cut_height,
    cut_k,
    dahl_partition,
    gamma_index,
    select_partition,
    silhouette_index,
    tau_index,
)
from .simulate import (                                # noqa: F401
    ObservationDesign,
    Scenario,
    StudyReport,
    cluster_size_stats,
    cross_validate,
    eval_metrics,
    generate_dataset,
    partition_error,
    run_study,
    scenario_sim1,
    scenario_sim2,
)
