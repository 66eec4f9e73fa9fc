"""anchorgnn: uncertainty-aware graph classification via stochastic anchoring.

Small, self-contained toolkit: a float64 autodiff engine, GCN/GIN graph
classifiers, anchored (stochastically centered) model variants, standard UQ
baselines, safety metrics (calibration error, OOD AUROC, generalization-gap
error), and a config-driven experiment harness. CPU only, deterministic by
seed.
"""

from .anchoring import (
    AnchorConfig,
    AnchorDistribution,
    FixedAnchorSet,
    PredictionSummary,
    fit_anchor_gaussian,
    infer_with_anchors,
    summarize_anchor_probs,
)
from .baselines import (
    DeepEnsembleClassifier,
    MCDropoutClassifier,
    TemperatureScaledClassifier,
    apply_temperature,
    fit_temperature,
)
from .datasets import (
    DatasetSplit,
    MotifSpec,
    gaussian_feature_shift,
    generate_motif_dataset,
    size_quantile_split,
)
from .estimators import (
    AnchoredGnnClassifier,
    GnnGraphClassifier,
    PretrainedAnchoredGnnClassifier,
)
from .graphs import Graph, GraphBatch, batch_graphs, load_dataset, save_dataset
from .harness import (
    ExperimentConfig,
    MetricsReport,
    RunRecord,
    compare_methods,
    load_config,
    parse_config,
    run_experiment,
)
from .metrics import EvalRecord, accuracy, auroc, ece, fit_gep_threshold, gep_error
from .models import GnnConfig
from .rng import RngStream

__version__ = "0.1.0"

__all__ = [
    "AnchorConfig",
    "AnchorDistribution",
    "AnchoredGnnClassifier",
    "DatasetSplit",
    "DeepEnsembleClassifier",
    "EvalRecord",
    "ExperimentConfig",
    "FixedAnchorSet",
    "GnnConfig",
    "GnnGraphClassifier",
    "Graph",
    "GraphBatch",
    "MCDropoutClassifier",
    "MetricsReport",
    "MotifSpec",
    "PredictionSummary",
    "PretrainedAnchoredGnnClassifier",
    "RngStream",
    "RunRecord",
    "TemperatureScaledClassifier",
    "accuracy",
    "apply_temperature",
    "auroc",
    "batch_graphs",
    "compare_methods",
    "ece",
    "fit_anchor_gaussian",
    "fit_gep_threshold",
    "fit_temperature",
    "gaussian_feature_shift",
    "generate_motif_dataset",
    "gep_error",
    "infer_with_anchors",
    "load_config",
    "load_dataset",
    "parse_config",
    "run_experiment",
    "save_dataset",
    "size_quantile_split",
    "summarize_anchor_probs",
]
