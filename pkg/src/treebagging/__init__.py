"""Adaptive contextual experiments with bagged policy trees and a decaying probability floor."""

from .bandits import (
    BanditConfig,
    bootstrap_es_assign,
    bootstrap_thompson_assign,
    bootstrap_ttts_assign,
    propose_batch,
    treebagging_assign,
    uniform_assign,
)
from .core import (
    AipwScoreTable,
    ArmSet,
    ContextSchema,
    Feature,
    FixedPolicy,
    InvalidFloorError,
    Leaf,
    ObservationLog,
    PropensityError,
    Split,
    TreePolicy,
    ValidationError,
    aipw_scores,
    apply_probability_floor,
    floor_schedule,
    frequency_scores,
    rng_stream,
)
from .evaluation import (
    contrast_per_region,
    estimate_policy_value,
    evaluation_mixture_propensity,
    power_across_sims,
    subgroup_means,
    test_value_difference,
)
from .pipeline import PipelineConfig, region_partition, run_learning_pipeline
from .policy_tree import evaluate_policy_on_scores, select_depth_by_cv, solve_tree
from .regression import (
    fit_crossfit_mu,
    fit_lasso,
    fit_ordinal,
    ordinal_feature_map,
    select_regularization_one_se,
)
from .simulation import (
    ExperimentConfig,
    SemiSyntheticDGP,
    build_dgp,
    run_replicate,
    run_study,
    synthetic_corpus,
)

__version__ = "0.1.0"

__all__ = [
    "AipwScoreTable",
    "ArmSet",
    "BanditConfig",
    "ContextSchema",
    "ExperimentConfig",
    "Feature",
    "FixedPolicy",
    "InvalidFloorError",
    "Leaf",
    "ObservationLog",
    "PipelineConfig",
    "PropensityError",
    "SemiSyntheticDGP",
    "Split",
    "TreePolicy",
    "ValidationError",
    "aipw_scores",
    "apply_probability_floor",
    "bootstrap_es_assign",
    "bootstrap_thompson_assign",
    "bootstrap_ttts_assign",
    "build_dgp",
    "contrast_per_region",
    "estimate_policy_value",
    "evaluate_policy_on_scores",
    "evaluation_mixture_propensity",
    "fit_crossfit_mu",
    "fit_lasso",
    "fit_ordinal",
    "floor_schedule",
    "frequency_scores",
    "ordinal_feature_map",
    "power_across_sims",
    "propose_batch",
    "region_partition",
    "rng_stream",
    "run_learning_pipeline",
    "run_replicate",
    "run_study",
    "select_depth_by_cv",
    "select_regularization_one_se",
    "solve_tree",
    "subgroup_means",
    "synthetic_corpus",
    "test_value_difference",
    "treebagging_assign",
    "uniform_assign",
]

