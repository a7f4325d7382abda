"""
CSV ingestion for classification datasets described by a JSON schema sidecar.

Every column is declared numeric, categorical, label, or ignore. Category codes are
built over the whole file (sorted distinct values), so no unseen category can appear
while a run draws rows.
"""

import logging
from pathlib import Path
from typing import Literal

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from environments import ClassificationBanditEnv, ClassificationDataset
from tree_core import FeatureMatrix, FeatureSchema

logger = logging.getLogger(__name__)


class ColumnSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = Field(..., min_length=1)
    type: Literal["numeric", "categorical", "label", "ignore"]


class DatasetSchema(BaseModel):
    """Sidecar describing one CSV file's columns and parsing options."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str
    columns: list[ColumnSpec]
    header: bool = Field(default=False, description="First line holds column names (they are replaced by ours).")
    delimiter: str = Field(default=",", min_length=1)
    missing_values: list[str] = Field(
        default_factory=lambda: ["?"],
        description="Cell values marking a missing entry; rows containing one are dropped.",
    )
    label_aliases: dict[str, str] = Field(
        default_factory=dict,
        description="Label spellings folded together, e.g. '>50K.' -> '>50K'.",
    )

    @model_validator(mode="after")
    def check_columns(self) -> "DatasetSchema":
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValueError("column names must be unique")
        if sum(c.type == "label" for c in self.columns) != 1:
            raise ValueError("exactly one column must be the label")
        if not any(c.type in ("numeric", "categorical") for c in self.columns):
            raise ValueError("at least one feature column is required")
        return self

    def names_of(self, kind: str) -> list[str]:
        return [c.name for c in self.columns if c.type == kind]

    @property
    def label(self) -> str:
        return self.names_of("label")[0]

    @classmethod
    def load(cls, path: Path) -> "DatasetSchema":
        return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))


def load_classification_dataset(path: Path, schema: DatasetSchema) -> ClassificationDataset:
    """Parse, validate and encode a CSV file; rows with missing values are dropped and counted."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset file not found: {path}")
    if path.stat().st_size == 0:
        raise ValueError(f"empty dataset: {path}")
    names = [c.name for c in schema.columns]
    try:
        frame = pd.read_csv(
            path,
            sep=schema.delimiter if schema.delimiter != " " else r"\s+",
            header=0 if schema.header else None,
            names=names,
            dtype=str,
            keep_default_na=False,
            na_filter=False,
            skipinitialspace=True,
            skip_blank_lines=True,
            engine="python" if schema.delimiter == " " else "c",
        )
    except pd.errors.EmptyDataError as e:
        raise ValueError(f"empty dataset: {path}") from e
    except pd.errors.ParserError as e:
        raise ValueError(f"malformed row in {path}: {e}") from e
    if frame.empty:
        raise ValueError(f"empty dataset: {path}")

    first_line = 2 if schema.header else 1
    frame = frame.apply(lambda col: col.str.strip())
    used = [c.name for c in schema.columns if c.type != "ignore"]
    missing = frame[used].isin(schema.missing_values).any(axis=1) if schema.missing_values else None
    dropped = 0
    if missing is not None and missing.any():
        dropped = int(missing.sum())
        logger.warning("Dropped rows with missing values: dataset=%s rows=%s", schema.name, dropped)
        frame = frame.loc[~missing]
    if frame.empty:
        raise ValueError(f"empty dataset: every row of {path} has a missing value")

    numeric_names = schema.names_of("numeric")
    numeric = np.empty((len(frame), len(numeric_names)))
    for j, name in enumerate(numeric_names):
        values = pd.to_numeric(frame[name], errors="coerce")
        bad = ~np.isfinite(values.to_numpy(dtype=np.float64))
        if bad.any():
            lines = (frame.index[bad] + first_line).tolist()[:10]
            raise ValueError(f"malformed numeric value in column {name!r} at lines {lines}")
        numeric[:, j] = values.to_numpy(dtype=np.float64)

    categorical_names = schema.names_of("categorical")
    categorical = np.empty((len(frame), len(categorical_names)), dtype=np.int64)
    cardinalities = []
    for j, name in enumerate(categorical_names):
        levels, codes = np.unique(frame[name].to_numpy(dtype=str), return_inverse=True)
        categorical[:, j] = codes
        cardinalities.append(max(2, len(levels)))

    labels_raw = frame[schema.label].map(lambda v: schema.label_aliases.get(v, v)).to_numpy(dtype=str)
    class_names, labels = np.unique(labels_raw, return_inverse=True)

    feature_schema = FeatureSchema(numeric_count=len(numeric_names), categorical_cardinalities=tuple(cardinalities))
    dataset = ClassificationDataset(
        name=schema.name,
        X=FeatureMatrix(numeric, categorical, feature_schema),
        labels=labels,
        class_names=tuple(str(c) for c in class_names),
        feature_names=tuple(numeric_names + categorical_names),
        dropped_rows=dropped,
    )
    logger.info(
        "Loaded dataset: name=%s rows=%s features=%s classes=%s dropped=%s",
        schema.name,
        len(dataset),
        feature_schema.n_features,
        dataset.n_classes,
        dropped,
    )
    return dataset


def ingest_dataset(
    path: Path, schema: DatasetSchema, seed: int, horizon: int | None = None
) -> ClassificationBanditEnv:
    """Load a dataset and wrap it as a bandit environment with a per-seed draw order."""
    return ClassificationBanditEnv(load_classification_dataset(path, schema), seed=seed, horizon=horizon)
