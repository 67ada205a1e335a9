"""FPL+ pipeline: configuration, stages, metrics and pseudo-label filtering."""

from ._core import (
    Config,
    ConfigError,
    Error,
    MissingStageError,
    ShapeError,
    ValidationError,
    assd,
    dice,
    entropy_map,
    image_uncertainty,
    image_weights,
    run_all,
    run_stage,
    soft_dice_loss,
    stage_names,
    uncertain_region_size,
    variance_map,
)

__all__ = [
    "Config",
    "ConfigError",
    "Error",
    "MissingStageError",
    "ShapeError",
    "ValidationError",
    "assd",
    "dice",
    "entropy_map",
    "image_uncertainty",
    "image_weights",
    "run_all",
    "run_stage",
    "soft_dice_loss",
    "stage_names",
    "uncertain_region_size",
    "variance_map",
]
