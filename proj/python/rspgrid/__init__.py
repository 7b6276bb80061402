"""Recurrent state projection for occupancy and velocity grids."""

from ._rspgrid import (
    ConfigError,
    config_pairs,
    evaluate,
    generate_dataset,
    generate_sequence,
    gradcheck,
    iou_metrics,
    max_capturable_speed,
    parameter_count,
    parameter_names,
    parse_config,
    project_state,
    train,
    velocity_mae,
    velocity_to_offset,
)

CLASSES = ("free", "unknown", "occupied", "moving")

__all__ = [
    "CLASSES",
    "ConfigError",
    "config_pairs",
    "evaluate",
    "generate_dataset",
    "generate_sequence",
    "gradcheck",
    "iou_metrics",
    "max_capturable_speed",
    "parameter_count",
    "parameter_names",
    "parse_config",
    "project_state",
    "train",
    "velocity_mae",
    "velocity_to_offset",
]
