"""Sparse MLP training with deterministic and random masks, plus calibration metrics."""

from ._cigl import (
    Checkpoint,
    CiglError,
    ExperimentConfig,
    Model,
    TrainConfig,
    TrainResult,
    accuracy,
    correlate,
    ece,
    erk_allocate,
    fit_temperature,
    label_smoothing_targets,
    load_checkpoint,
    load_config,
    load_csv,
    mask_update_fraction,
    nll,
    parse_config,
    predict,
    predict_mc_dropout,
    reliability_bins,
    run_experiment,
    save_checkpoint,
    softmax,
    sweep,
    train,
    two_moons,
    update_layer_mask,
)

__all__ = [
    "Checkpoint",
    "CiglError",
    "ExperimentConfig",
    "Model",
    "TrainConfig",
    "TrainResult",
    "accuracy",
    "correlate",
    "ece",
    "erk_allocate",
    "fit_temperature",
    "label_smoothing_targets",
    "load_checkpoint",
    "load_config",
    "load_csv",
    "mask_update_fraction",
    "nll",
    "parse_config",
    "predict",
    "predict_mc_dropout",
    "reliability_bins",
    "run_experiment",
    "save_checkpoint",
    "softmax",
    "sweep",
    "train",
    "two_moons",
    "update_layer_mask",
]
