"""
Experiment configuration models.

One JSON document describes an experiment: the environment, the agents with their
ensemble/policy/baseline parameters, the horizon, the seeds, delayed-feedback batching,
and optional sensitivity sweeps. Every default is materialized when the resolved copy
is written next to the results.
"""

import hashlib
import json
from typing import Annotated, Any, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ensembles import EnsembleConfig
from policies import PolicyConfig

AgentKind = Literal["teucb", "tets", "linucb", "lints", "ucb1_normal", "treebootstrap", "random", "oracle"]
TREE_AGENTS = frozenset({"teucb", "tets", "treebootstrap"})
LINEAR_AGENTS = frozenset({"linucb", "lints"})
SweepParameter = Literal["ensemble.max_depth", "ensemble.n_trees", "policy.exploration", "feedback_batch_size"]


class ClassificationEnvSpec(BaseModel):
    """Classification task turned into a K-armed bandit."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["classification"] = "classification"
    dataset: str = Field(..., min_length=1, description="CSV file, relative to the config or TEBANDIT_DATA_DIR.")
    dataset_schema: str = Field(..., min_length=1, description="JSON schema sidecar for the CSV file.")


class GridSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    rows: int = Field(default=10, ge=2)
    cols: int = Field(default=12, ge=2)
    spacing: float = Field(default=250.0, gt=0.0, description="Grid spacing in metres.")
    seed: int = 0


class NavigationEnvSpec(BaseModel):
    """Road network with one origin/destination problem instance."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["navigation"] = "navigation"
    network: str | None = Field(default=None, description="Network JSON file; None generates a grid network.")
    grid: GridSpec = Field(default_factory=GridSpec, description="Generator settings when no network file is given.")
    instance: str = Field(default="diagonal", description="Name of the problem instance to route.")


EnvironmentSpec = Annotated[Union[ClassificationEnvSpec, NavigationEnvSpec], Field(discriminator="kind")]


class AgentSpec(BaseModel):
    """One agent: its kind plus whichever parameter blocks that kind reads."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: AgentKind
    name: str | None = Field(default=None, description="Label in outputs; defaults to a name derived from kind.")
    ensemble: EnsembleConfig = Field(default_factory=EnsembleConfig)
    policy: PolicyConfig = Field(default_factory=PolicyConfig)
    alpha: float = Field(default=1.0, ge=0.0, description="LinUCB confidence width α.")
    lints_scale: float = Field(default=1.0, ge=0.0, description="LinTS posterior scale v.")
    ridge: float = Field(default=1.0, gt=0.0, description="Ridge parameter λ of linear agents.")
    bootstrap_backend: Literal["tree", "forest", "boosting"] = Field(
        default="tree", description="TreeBootstrap model: single tree, bagged forest, or boosted ensemble."
    )
    refit_stride: int = Field(default=1, ge=1, description="TreeBootstrap refits every this many rounds.")
    encoding: Literal["disjoint", "hybrid"] | None = Field(
        default=None, description="Context encoding; None uses hybrid for tree agents and disjoint for linear ones."
    )
    allow_encoding_override: bool = False
    feedback_batch_size: int | None = Field(default=None, ge=1, description="Overrides the experiment batch size.")

    @model_validator(mode="before")
    @classmethod
    def method_from_kind(cls, data: Any) -> Any:
        if not isinstance(data, dict) or data.get("kind") not in ("teucb", "tets"):
            return data
        method = "ucb" if data["kind"] == "teucb" else "ts"
        policy = data.get("policy")
        if policy is None:
            policy = {}
        if isinstance(policy, PolicyConfig):
            policy = policy.model_dump()
        else:
            policy = dict(policy)
        if policy.get("method", method) != method:
            raise ValueError(f"agent kind {data['kind']!r} requires policy.method={method!r}")
        policy["method"] = method
        return {**data, "policy": policy}

    @model_validator(mode="after")
    def check_encoding(self) -> "AgentSpec":
        natural = self.natural_encoding
        if self.encoding is not None and natural is not None and self.encoding != natural:
            if not self.allow_encoding_override:
                raise ValueError(
                    f"agent kind {self.kind!r} expects {natural!r} encoding; set allow_encoding_override to use {self.encoding!r}"
                )
        return self

    @property
    def natural_encoding(self) -> Literal["disjoint", "hybrid"] | None:
        if self.kind in TREE_AGENTS:
            return "hybrid"
        if self.kind in LINEAR_AGENTS:
            return "disjoint"
        return None

    @property
    def resolved_encoding(self) -> Literal["disjoint", "hybrid"]:
        return self.encoding or self.natural_encoding or "hybrid"

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind in ("teucb", "tets"):
            return f"{self.kind}-{'rf' if self.ensemble.trainer == 'bagging' else 'gbdt'}"
        if self.kind == "treebootstrap":
            return f"treebootstrap-{self.bootstrap_backend}"
        return self.kind


class SweepSpec(BaseModel):
    """Expand every agent into one variant per value of a parameter."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    parameter: SweepParameter
    values: list[float] = Field(..., min_length=1)

    @field_validator("values")
    @classmethod
    def distinct_values(cls, v: list[float]) -> list[float]:
        if len(set(v)) != len(v):
            raise ValueError("sweep values must be distinct")
        return v


class ExperimentConfig(BaseModel):
    """Complete, self-describing experiment definition."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = Field(..., min_length=1, pattern=r"^[A-Za-z0-9_.\-]+$")
    environment: EnvironmentSpec
    agents: list[AgentSpec] = Field(..., min_length=1)
    horizon: int = Field(..., ge=1, description="Decision rounds T per run.")
    repetitions: int = Field(default=1, ge=1)
    seeds: list[int] = Field(default_factory=list, description="One run per seed; defaults to 0..repetitions-1.")
    feedback_batch_size: int = Field(default=1, ge=1, description="1 is instant feedback; B > 1 delivers every B rounds.")
    sweeps: list[SweepSpec] = Field(default_factory=list)
    output_dir: str | None = Field(default=None, description="Results directory; defaults to <output root>/<name>.")
    workers: int | None = Field(default=None, ge=1, description="Parallel jobs; defaults to TEBANDIT_WORKERS.")
    resume: bool = Field(
        default=True,
        description="Skip finished jobs and continue interrupted ones from their last checkpoint, when the config hash matches.",
    )
    checkpoint_every: int = Field(
        default=1000, ge=0, description="Rounds between in-progress job checkpoints; 0 turns them off."
    )

    @model_validator(mode="before")
    @classmethod
    def default_seeds(cls, data: Any) -> Any:
        if isinstance(data, dict) and not data.get("seeds"):
            return {**data, "seeds": list(range(int(data.get("repetitions", 1))))}
        return data

    @model_validator(mode="after")
    def check_consistency(self) -> "ExperimentConfig":
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        if self.repetitions != len(self.seeds) and self.repetitions != 1:
            raise ValueError(f"repetitions={self.repetitions} disagrees with {len(self.seeds)} seeds")
        if self.environment.kind == "navigation" and any(a.kind == "ucb1_normal" for a in self.agents):
            raise ValueError("ucb1_normal is context-free and cannot route on the navigation environment")
        labels = [a.label for a in self.agents]
        if len(set(labels)) != len(labels):
            raise ValueError(f"agent labels must be unique, got {labels}")
        if len({s.parameter for s in self.sweeps}) != len(self.sweeps):
            raise ValueError("each parameter may be swept only once")
        return self


def config_hash(config: ExperimentConfig) -> str:
    """First 16 hex chars of SHA-256 over the canonical JSON, ignoring where and how it runs."""
    payload = config.model_dump(mode="json", exclude={"output_dir", "workers", "resume", "checkpoint_every"})
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
