"""Experiment config parsing and readable validation errors."""

import json
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from experiment_config import ExperimentConfig

# Appended to validation failures so the next attempt has a working template.
EXPERIMENT_CONFIG_USAGE = """
How to write an experiment config:
- One JSON object with keys:
  - name (required): letters, digits, '.', '_' or '-'.
  - environment (required): {"kind": "classification", "dataset": "mushroom.csv", "dataset_schema": "schemas/mushroom.json"}
    or {"kind": "navigation", "instance": "diagonal"} (optionally "network": "network.json").
  - agents (required): list of {"kind": "teucb" | "tets" | "linucb" | "lints" | "ucb1_normal" | "treebootstrap" | "random" | "oracle", ...}.
  - horizon (required): rounds per run. seeds or repetitions: which runs to make.
  - feedback_batch_size, sweeps, output_dir, workers, resume (optional).
Example: {"name": "demo", "environment": {"kind": "navigation"}, "agents": [{"kind": "tets"}], "horizon": 200, "seeds": [0, 1]}
"""


def format_validation_error(error: ValidationError) -> str:
    """One line per failing field, as ``dotted.path: message``."""
    lines = []
    for item in error.errors():
        path = ".".join(str(p) for p in item["loc"]) or "<root>"
        lines.append(f"{path}: {item['msg']}")
    return "\n".join(lines)


def parse_experiment_config(raw: Any) -> ExperimentConfig:
    """Normalize a config given as a model, dict, JSON string, or path to a JSON file.

    Raises:
        ValidationError: a well-formed document fails field validation.
        ValueError: the input is not JSON or not an object.
    """
    if isinstance(raw, ExperimentConfig):
        return raw
    if isinstance(raw, Path):
        if not raw.is_file():
            raise ValueError(f"config file not found: {raw}")
        raw = raw.read_text(encoding="utf-8")
    if isinstance(raw, str):
        try:
            raw = json.loads(raw)
        except json.JSONDecodeError as e:
            raise ValueError(f"invalid config (expected JSON): {e}" + EXPERIMENT_CONFIG_USAGE) from e
    if isinstance(raw, dict):
        return ExperimentConfig.model_validate(raw)
    raise ValueError(f"config must be a JSON object, got {type(raw).__name__}" + EXPERIMENT_CONFIG_USAGE)
