"""Treatment effect estimation by matching in a learned representation space.

Pipeline: generate or ingest a dataset, train the selection/representation
network, impute counterfactuals by optimal matching in the learned space,
and score the estimates against ground truth.  See the README for the
command-line interface.
"""

from ._backend import USING_COMPILED, backend_name
from .balance import TransportPlan, sinkhorn_wasserstein, wasserstein_grad
from .datagen import (
    Dataset,
    SyntheticSpec,
    augment_irrelevant,
    biased_resample,
    generate_pool,
    generate_synthetic,
    read_dataset,
    write_dataset,
)
from .evaluation import EffectEstimates, MetricReport, estimate_effects, feature_importance, metrics
from .harness import ExperimentConfig, bias_sweep, hyper_search, run_experiment
from .matching import MatchResult, impute_counterfactuals, optimal_assignment, pairwise_cost
from .network import (
    ForwardResult,
    NetworkParams,
    TrainConfig,
    adam_step,
    backward,
    elastic_net_penalty,
    eval_forward,
    forward,
    l2_prediction_penalty,
    load_checkpoint,
    loss_outcome,
    loss_treatment,
    save_checkpoint,
    total_objective,
    train,
)
from .numcore import RandomStream, mvn_sample, random_correlation_covariance, std_normal_cdf

__version__ = "0.1.0"

__all__ = [
    "USING_COMPILED",
    "backend_name",
    "TransportPlan",
    "sinkhorn_wasserstein",
    "wasserstein_grad",
    "Dataset",
    "SyntheticSpec",
    "augment_irrelevant",
    "biased_resample",
    "generate_pool",
    "generate_synthetic",
    "read_dataset",
    "write_dataset",
    "EffectEstimates",
    "MetricReport",
    "estimate_effects",
    "feature_importance",
    "metrics",
    "ExperimentConfig",
    "bias_sweep",
    "hyper_search",
    "run_experiment",
    "MatchResult",
    "impute_counterfactuals",
    "optimal_assignment",
    "pairwise_cost",
    "ForwardResult",
    "NetworkParams",
    "TrainConfig",
    "adam_step",
    "backward",
    "elastic_net_penalty",
    "eval_forward",
    "forward",
    "l2_prediction_penalty",
    "load_checkpoint",
    "loss_outcome",
    "loss_treatment",
    "save_checkpoint",
    "total_objective",
    "train",
    "RandomStream",
    "mvn_sample",
    "random_correlation_covariance",
    "std_normal_cdf",
]
