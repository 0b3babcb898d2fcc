"""Diagonal-attention GAN lab: layers, metrics, data and checkpoints from the C++ core."""

from ._dgan import (
    ContractError,
    DimensionError,
    FormatError,
    Generator,
    IoError,
    NumericError,
    ValidationError,
    adain,
    attention_map,
    combined_transform,
    config_defaults,
    conv2d,
    dat,
    feature_stats,
    frechet_distance,
    load_checkpoint,
    run_cli,
    save_checkpoint,
    synth_dataset,
)

__all__ = [
    "ContractError",
    "DimensionError",
    "FormatError",
    "Generator",
    "IoError",
    "NumericError",
    "ValidationError",
    "adain",
    "attention_map",
    "combined_transform",
    "config_defaults",
    "conv2d",
    "dat",
    "feature_stats",
    "frechet_distance",
    "load_checkpoint",
    "run_cli",
    "save_checkpoint",
    "synth_dataset",
]
