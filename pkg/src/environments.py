"""
Classification bandits, context encodings, and regret accounting.

Single responsibility: turning a labelled dataset into a K-armed contextual bandit,
the disjoint (arm-blocked) and hybrid (arm-prefixed) context encodings, and the
per-step regret trace written by the harness. The road-network environment lives
in road_network.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal, Mapping, Sequence

import numpy as np
import pandas as pd

from tree_core import FeatureMatrix, FeatureSchema, FeatureVector

logger = logging.getLogger(__name__)

Encoding = Literal["disjoint", "hybrid"]

# Instantaneous regrets above this negative slack are float noise and clamp to zero.
REGRET_TOLERANCE = 1e-9


class LinearEncoder:
    """Dense encoding for linear agents: standardized numerics followed by one-hot categoricals."""

    def __init__(self, schema: FeatureSchema, mean: np.ndarray | None = None, std: np.ndarray | None = None) -> None:
        self.schema = schema
        self.mean = np.zeros(schema.numeric_count) if mean is None else np.asarray(mean, dtype=np.float64)
        std = np.ones(schema.numeric_count) if std is None else np.asarray(std, dtype=np.float64)
        self.std = np.where(std > 0.0, std, 1.0)
        self._offsets = np.concatenate([[0], np.cumsum(schema.categorical_cardinalities)]).astype(np.int64)

    @classmethod
    def fit(cls, X: FeatureMatrix) -> "LinearEncoder":
        if len(X) == 0:
            return cls(X.schema)
        return cls(X.schema, X.numeric.mean(axis=0), X.numeric.std(axis=0))

    @property
    def dim(self) -> int:
        return self.schema.numeric_count + int(sum(self.schema.categorical_cardinalities))

    def transform(self, x: FeatureVector) -> np.ndarray:
        self.schema.check(x)
        out = np.zeros(self.dim)
        p = self.schema.numeric_count
        out[:p] = (x.numeric - self.mean) / self.std
        out[p + self._offsets[:-1] + x.categorical] = 1.0
        return out


def disjoint_schema(dim: int, n_arms: int) -> FeatureSchema:
    return FeatureSchema(numeric_count=dim * n_arms)


def encode_disjoint(
    x: FeatureVector, arm: int, n_arms: int, encoder: LinearEncoder | None = None, schema: FeatureSchema | None = None
) -> FeatureVector:
    """Place the dense form of x in block ``arm`` of a K·d vector, zeros elsewhere.

    Without an encoder, numerics are kept as-is and categoricals are one-hot expanded.
    """
    if not 0 <= arm < n_arms:
        raise ValueError(f"invalid arm {arm} for {n_arms} arms")
    if encoder is None:
        if schema is None:
            raise ValueError("encode_disjoint needs the source schema or an encoder")
        encoder = LinearEncoder(schema)
    dense = encoder.transform(x)
    d = dense.size
    out = np.zeros(d * n_arms)
    out[arm * d : (arm + 1) * d] = dense
    target = disjoint_schema(d, n_arms)
    return FeatureVector(out, np.zeros(0, dtype=np.int64), target.schema_id)


def hybrid_schema(schema: FeatureSchema, n_arms: int) -> FeatureSchema:
    """Source schema with the arm id prepended as a categorical feature."""
    return FeatureSchema(
        numeric_count=schema.numeric_count,
        categorical_cardinalities=(max(n_arms, 2), *schema.categorical_cardinalities),
    )


def encode_hybrid(x: FeatureVector, arm: int, n_arms: int) -> FeatureVector:
    """Prepend the arm id as the first categorical feature; raw features are preserved."""
    if not 0 <= arm < max(n_arms, 2):
        raise ValueError(f"invalid arm {arm} for {n_arms} arms")
    cards = _cardinalities_from_id(x.schema_id)
    target = FeatureSchema(
        numeric_count=x.numeric.size, categorical_cardinalities=(max(n_arms, 2), *cards)
    )
    return FeatureVector(x.numeric, np.concatenate([[arm], x.categorical]).astype(np.int64), target.schema_id)


def strip_hybrid(x: FeatureVector) -> FeatureVector:
    """Inverse of encode_hybrid: drop the arm code."""
    cards = _cardinalities_from_id(x.schema_id)[1:]
    source = FeatureSchema(numeric_count=x.numeric.size, categorical_cardinalities=cards)
    return FeatureVector(x.numeric, x.categorical[1:], source.schema_id)


def _cardinalities_from_id(schema_id: str) -> tuple[int, ...]:
    cat_part = schema_id.split("-c", 1)[1]
    return () if cat_part == "0" else tuple(int(c) for c in cat_part.split("."))


@dataclass(frozen=True, eq=False)
class ClassificationDataset:
    """Validated rows of a labelled dataset with categories mapped to dense codes."""

    name: str
    X: FeatureMatrix
    labels: np.ndarray
    class_names: tuple[str, ...]
    feature_names: tuple[str, ...] = ()
    dropped_rows: int = 0

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.shape != (len(self.X),):
            raise ValueError("labels and rows differ in length")
        if labels.size and (labels.min() < 0 or labels.max() >= len(self.class_names)):
            raise ValueError("label codes out of range")
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def schema(self) -> FeatureSchema:
        return self.X.schema


class ClassificationBanditEnv:
    """K classes become K arms; the arm matching the row's label pays 1, every other arm 0.

    Rows are drawn without replacement in a per-seed permutation.
    """

    def __init__(self, dataset: ClassificationDataset, seed: int, horizon: int | None = None) -> None:
        n = len(dataset)
        horizon = n if horizon is None else horizon
        if horizon > n:
            raise ValueError(f"horizon exceeds dataset: {horizon} > {n} rows")
        if dataset.n_classes < 1:
            raise ValueError("dataset has no classes")
        self.dataset = dataset
        self.horizon = horizon
        self.order = np.random.default_rng(seed).permutation(n)
        self.position = 0
        self.linear_encoder = LinearEncoder.fit(dataset.X)

    @property
    def n_arms(self) -> int:
        return self.dataset.n_classes

    def context_schema(self, encoding: Encoding) -> FeatureSchema:
        if encoding == "hybrid":
            return hybrid_schema(self.dataset.schema, self.n_arms)
        return disjoint_schema(self.linear_encoder.dim, self.n_arms)

    def _current(self) -> int:
        if self.position >= self.horizon:
            raise ValueError(f"horizon exceeds dataset: all {self.horizon} rows consumed")
        return int(self.order[self.position])

    def current_label(self) -> int:
        return int(self.dataset.labels[self._current()])

    def contexts(self, encoding: Encoding) -> list[FeatureVector]:
        """One context per arm for the current row."""
        x = self.dataset.X.row(self._current())
        if encoding == "hybrid":
            return [encode_hybrid(x, arm, self.n_arms) for arm in range(self.n_arms)]
        return [encode_disjoint(x, arm, self.n_arms, self.linear_encoder) for arm in range(self.n_arms)]

    def expected_rewards(self) -> np.ndarray:
        out = np.zeros(self.n_arms)
        out[self.current_label()] = 1.0
        return out

    def step(self, arm: int) -> tuple[float, float]:
        """Reveal the current row's reward for ``arm`` and advance; returns (reward, regret)."""
        if not 0 <= arm < self.n_arms:
            raise ValueError(f"invalid arm {arm} for {self.n_arms} arms")
        reward = 1.0 if arm == self.current_label() else 0.0
        self.position += 1
        return reward, 1.0 - reward

    def state(self) -> dict[str, int]:
        """Stream position; the row order itself is rebuilt from the seed."""
        return {"position": self.position}

    def restore(self, state: Mapping[str, Any]) -> None:
        position = int(state["position"])
        if not 0 <= position <= self.horizon:
            raise ValueError(f"checkpoint position {position} outside horizon {self.horizon}")
        self.position = position


def class_env_step(env: ClassificationBanditEnv, arm: int) -> float:
    return env.step(arm)[0]


@dataclass
class RegretTrace:
    """Per-step choices, rewards, instantaneous and cumulative regret for one (agent, seed) run."""

    agent: str
    seed: int
    config_hash: str
    choices: list[str] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    regrets: list[float] = field(default_factory=list)
    cumulative: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.regrets)

    def record(self, choice: int | Sequence[int], reward: float, regret: float) -> None:
        if regret < -REGRET_TOLERANCE:
            raise RuntimeError(f"negative regret {regret!r} at step {len(self) + 1}")
        regret = max(regret, 0.0)
        label = str(choice) if isinstance(choice, (int, np.integer)) else "-".join(str(e) for e in choice)
        self.choices.append(label)
        self.rewards.append(float(reward))
        self.regrets.append(float(regret))
        self.cumulative.append((self.cumulative[-1] if self.cumulative else 0.0) + float(regret))

    @property
    def final_regret(self) -> float:
        return self.cumulative[-1] if self.cumulative else 0.0

    def steps(self) -> dict[str, list]:
        return {"choices": self.choices, "rewards": self.rewards, "regrets": self.regrets, "cumulative": self.cumulative}

    def load_steps(self, data: Mapping[str, Any]) -> None:
        """Replace the recorded steps with a saved prefix."""
        lengths = {len(data[key]) for key in ("choices", "rewards", "regrets", "cumulative")}
        if len(lengths) != 1:
            raise ValueError("saved trace columns differ in length")
        self.choices = [str(c) for c in data["choices"]]
        self.rewards = [float(r) for r in data["rewards"]]
        self.regrets = [float(r) for r in data["regrets"]]
        self.cumulative = [float(c) for c in data["cumulative"]]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "step": np.arange(1, len(self) + 1),
                "choice": self.choices,
                "reward": self.rewards,
                "regret": self.regrets,
                "cumulative_regret": self.cumulative,
            }
        )

    def to_csv(self, path: Path) -> None:
        self.to_frame().to_csv(path, index=False, lineterminator="\n")

    @classmethod
    def read_csv(cls, path: Path, agent: str, seed: int, config_hash: str = "") -> "RegretTrace":
        frame = pd.read_csv(path, dtype={"choice": str}, float_precision="round_trip")
        return cls(
            agent=agent,
            seed=seed,
            config_hash=config_hash,
            choices=frame["choice"].tolist(),
            rewards=frame["reward"].astype(float).tolist(),
            regrets=frame["regret"].astype(float).tolist(),
            cumulative=frame["cumulative_regret"].astype(float).tolist(),
        )
