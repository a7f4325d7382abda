"""Pytest configuration and fixtures."""

import os
from pathlib import Path

import numpy as np
import pytest

# Settings are read at import time; keep test runs away from the caller's environment.
os.environ.setdefault("TEBANDIT_LOG_LEVEL", "WARNING")
os.environ["TEBANDIT_WORKERS"] = "1"

from tree_core import FeatureMatrix, FeatureSchema, SampleSet  # noqa: E402

REPO_ROOT = Path(__file__).resolve().parent.parent
FIXTURES = REPO_ROOT / "data" / "fixtures"
SCHEMAS = REPO_ROOT / "data" / "schemas"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def schemas_dir() -> Path:
    return SCHEMAS


@pytest.fixture
def mixed_schema() -> FeatureSchema:
    """Two numeric features and one categorical feature with four codes."""
    return FeatureSchema(numeric_count=2, categorical_cardinalities=(4,))


def random_sample_set(schema: FeatureSchema, n: int, seed: int = 0, noise: float = 0.1) -> SampleSet:
    """Targets follow a step function of the first numeric and the first categorical feature."""
    rng = np.random.default_rng(seed)
    numeric = rng.uniform(-1.0, 1.0, size=(n, schema.numeric_count))
    categorical = np.column_stack(
        [rng.integers(0, c, size=n) for c in schema.categorical_cardinalities]
    ) if schema.categorical_count else np.zeros((n, 0), dtype=np.int64)
    y = np.zeros(n)
    if schema.numeric_count:
        y += np.where(numeric[:, 0] > 0.0, 1.0, 0.0)
    if schema.categorical_count:
        y += np.where(categorical[:, 0] == 1, 0.5, 0.0)
    y += rng.normal(0.0, noise, size=n)
    return SampleSet(FeatureMatrix(numeric, categorical, schema), y)


@pytest.fixture
def sample_set_factory():
    return random_sample_set
