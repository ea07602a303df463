"""Drone search-path planning over simulated weed fields.

Simulator, deep-Q trainer, row-by-row baseline, and evaluation tools. Public
names resolve lazily so the CLI can pin BLAS thread counts before numpy
loads; `from weedscout import SearchEnv` works as usual.
"""

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    # rng
    "RngStream": "rng",
    # field simulation
    "FieldConfig": "fieldsim",
    "Field": "fieldsim",
    "generate_field": "fieldsim",
    "DetectionConfig": "fieldsim",
    "PriorConfig": "fieldsim",
    "generate_prior_map": "fieldsim",
    "simulate_detection_map": "fieldsim",
    "save_field": "fieldsim",
    "load_field": "fieldsim",
    "config_fingerprint": "fieldsim",
    # environment
    "Action": "environment",
    "StoppingCriterion": "environment",
    "EnvConfig": "environment",
    "SearchEnv": "environment",
    "Observation": "environment",
    # network
    "ConvSpec": "neuralnet",
    "QNetworkSpec": "neuralnet",
    "QNetwork": "neuralnet",
    "save_params": "neuralnet",
    "load_params": "neuralnet",
    "count_params": "neuralnet",
    # baseline
    "CoveragePlan": "baseline",
    "plan_row_by_row": "baseline",
    "PlanPolicy": "baseline",
    # trainer
    "TrainConfig": "trainer",
    "training_loop": "trainer",
    "ReplayBuffer": "trainer",
    "GreedyQPolicy": "trainer",
    "SoftmaxQPolicy": "trainer",
    # evaluation
    "EpisodeLog": "evaluation",
    "run_episode": "evaluation",
    "evaluate_policy": "evaluation",
    "found_fraction_at": "evaluation",
    "aggregate": "evaluation",
    "EvalSummary": "evaluation",
    "welch_t_test": "evaluation",
    "compare": "evaluation",
    "RandomWalkPolicy": "evaluation",
    # config
    "ExperimentConfig": "config",
    "ConfigError": "config",
    "default_config": "config",
    "apply_preset": "config",
    "load_config": "config",
    "save_manifest": "config",
    "PRESETS": "config",
}

__all__ = ["__version__", *sorted(_EXPORTS)]


def __getattr__(name):
    module = _EXPORTS.get(name)
    if module is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    return getattr(importlib.import_module(f".{module}", __name__), name)


def __dir__():
    return sorted(set(globals()) | set(__all__))
