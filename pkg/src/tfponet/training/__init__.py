"""Input sampling, TFPM-labelled datasets, losses and the training loop."""

from .dataset import (
    Dataset,
    GroundTruth,
    InputDistribution,
    build_dataset,
    export_dataset_csv,
    input_distribution,
    load_dataset,
    sample_inputs,
    save_dataset,
    sensor_layout,
    heldout_locations,
    train_locations,
)
from .fitting import (
    LossReport,
    TrainConfig,
    TrainResult,
    evaluate_mse,
    jump_error,
    loss_and_gradient,
    loss_data,
    loss_jump,
    loss_report,
    train,
)
from .grf import GrfSpec, sample_grf

__all__ = [
    "Dataset", "GroundTruth", "InputDistribution", "build_dataset", "export_dataset_csv",
    "input_distribution", "load_dataset", "sample_inputs", "save_dataset", "sensor_layout",
    "heldout_locations", "train_locations", "LossReport", "TrainConfig", "TrainResult",
    "evaluate_mse", "jump_error", "loss_and_gradient", "loss_data", "loss_jump", "loss_report",
    "train", "GrfSpec", "sample_grf",
]
