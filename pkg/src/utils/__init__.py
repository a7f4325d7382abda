"""Shared utilities for the bandit experiment runner."""

from utils.params import (
    EXPERIMENT_CONFIG_USAGE,
    format_validation_error,
    parse_experiment_config,
)
from utils.path_utils import resolve_data_file
from utils.rng import derive_seed

__all__ = [
    "EXPERIMENT_CONFIG_USAGE",
    "derive_seed",
    "format_validation_error",
    "parse_experiment_config",
    "resolve_data_file",
]
