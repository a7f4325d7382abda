"""
Decision rules for tree-ensemble bandits (TEUCB and TETS).

Single responsibility: arm scoring from ensemble posteriors, arm and super-arm
selection, the logarithmic rebuild schedule, and the agent that ties them to an
ensemble with incremental observation updates and checkpointing.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Literal, Mapping, Protocol, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ensembles import (
    ArmPosterior,
    EnsembleConfig,
    EnsembleModel,
    dump_model,
    fit_ensemble,
    load_model,
    posterior_batch,
    update_model,
)
from tree_core import MIN_LEAF, FeatureMatrix, FeatureSchema, FeatureVector, SampleSet

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "tebandit-agent/1"


class PolicyConfig(BaseModel):
    """Decision-rule parameters for a tree-ensemble agent."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    method: Literal["ucb", "ts"] = Field(default="ucb", description="'ucb' for TEUCB, 'ts' for TETS.")
    exploration: float = Field(
        default=1.0,
        ge=0.0,
        allow_inf_nan=False,
        description="Exploration factor ν scaling the confidence width or the sampling deviation.",
    )
    initial_rounds: int | None = Field(
        default=None,
        ge=0,
        description="Uniformly random rounds T_I before the first fit; None uses 10 per arm.",
    )
    rebuild_coefficient: float = Field(
        default=8.0,
        gt=0.0,
        description="Ensembles are rebuilt whenever ceil(coefficient * ln t) increases.",
    )
    refit_every_round: bool = Field(
        default=False,
        description="Refit after every delivery instead of following the logarithmic schedule.",
    )


@dataclass(frozen=True, slots=True)
class ArmScore:
    """Selection score of one arm (U for UCB, a sampled reward for TS)."""

    arm_id: int
    score: float
    posterior: ArmPosterior | None = None


@dataclass
class History:
    """Append-only record of observed (context, reward) pairs and the decision step."""

    contexts: list[FeatureVector] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    t: int = 0

    def __len__(self) -> int:
        return len(self.rewards)

    def append(self, x: FeatureVector, reward: float) -> None:
        self.contexts.append(x)
        self.rewards.append(float(reward))

    def sample_set(self, schema: FeatureSchema) -> SampleSet:
        return SampleSet(FeatureMatrix.from_vectors(self.contexts, schema), np.asarray(self.rewards))

    def to_dict(self) -> dict[str, Any]:
        return {
            "numeric": [x.numeric.tolist() for x in self.contexts],
            "categorical": [x.categorical.tolist() for x in self.contexts],
            "rewards": list(self.rewards),
            "t": self.t,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], schema: FeatureSchema) -> "History":
        history = cls(t=int(data.get("t", 0)))
        for numeric, categorical, reward in zip(data["numeric"], data["categorical"], data["rewards"]):
            history.append(schema.vector(numeric, categorical), reward)
        return history


@dataclass
class Timings:
    """Wall-clock seconds spent fitting, scoring, and inside the environment."""

    fit_seconds: float = 0.0
    scoring_seconds: float = 0.0
    environment_seconds: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {
            "fit_seconds": self.fit_seconds,
            "scoring_seconds": self.scoring_seconds,
            "environment_seconds": self.environment_seconds,
        }


def ucb_score(p: ArmPosterior, t: int, exploration: float) -> float:
    """U = μ̃ + sqrt(ν² σ̃² ln(t − 1) / c)."""
    if t < 2:
        raise ValueError(f"ucb_score needs t >= 2, got {t}")
    if p.count < 1:
        raise ValueError("ucb_score needs a positive leaf count")
    if p.var < 0.0:
        raise ValueError("posterior variance must be non-negative")
    return p.mu + math.sqrt(exploration * exploration * p.var * math.log(t - 1) / p.count)


def ts_sample(p: ArmPosterior, exploration: float, rng: np.random.Generator) -> float:
    """Draw from N(μ̃, ν² σ̃²); a zero scale returns μ̃ without consuming randomness."""
    if p.var < 0.0:
        raise ValueError("posterior variance must be non-negative")
    scale = exploration * math.sqrt(p.var)
    if scale == 0.0:
        return p.mu
    return float(rng.normal(p.mu, scale))


def select_arm(scores: Sequence[ArmScore], rng: np.random.Generator) -> int:
    """Arm with maximal score; ties are broken uniformly at random."""
    if not scores:
        raise ValueError("cannot select an arm from an empty score list")
    values = np.fromiter((s.score for s in scores), dtype=np.float64, count=len(scores))
    best = np.flatnonzero(values == values.max())
    if best.size == 1:
        return scores[int(best[0])].arm_id
    return scores[int(best[rng.integers(best.size)])].arm_id


class CombinatorialOracle(Protocol):
    """Maximizer of summed base-arm scores over a feasible family of super arms."""

    def solve(self, scores: Mapping[int, float]) -> list[int]: ...

    def sample(self, rng: np.random.Generator) -> list[int]: ...


class EnumerationOracle:
    """Oracle over an explicit list of super arms; ties go to the earliest listed."""

    def __init__(self, super_arms: Sequence[Sequence[int]]) -> None:
        self.super_arms = [list(s) for s in super_arms]

    def solve(self, scores: Mapping[int, float]) -> list[int]:
        if not self.super_arms:
            raise ValueError("no path: the feasible set is empty")
        totals = [sum(scores[a] for a in s) for s in self.super_arms]
        return list(self.super_arms[int(np.argmax(totals))])

    def sample(self, rng: np.random.Generator) -> list[int]:
        if not self.super_arms:
            raise ValueError("no path: the feasible set is empty")
        return list(self.super_arms[int(rng.integers(len(self.super_arms)))])


def select_super_arm(scores: Sequence[ArmScore], oracle: CombinatorialOracle) -> list[int]:
    """Super arm maximizing the sum of base-arm scores within the oracle's feasible set."""
    return oracle.solve({s.arm_id: s.score for s in scores})


def rebuild_value(t: int, coefficient: float = 8.0) -> int:
    if t < 1:
        raise ValueError(f"rebuild schedule needs t >= 1, got {t}")
    return math.ceil(coefficient * math.log(t))


def should_rebuild(t: int, last_rebuild_value: int, coefficient: float = 8.0) -> bool:
    """True iff ceil(coefficient * ln t) exceeds the value recorded at the last rebuild."""
    return rebuild_value(t, coefficient) > last_rebuild_value


def resolve_initial_rounds(policy: PolicyConfig, n_arms: int) -> int:
    return 10 * n_arms if policy.initial_rounds is None else policy.initial_rounds


Observation = tuple[int, FeatureVector, float]


class BanditAgent:
    """Common agent protocol used by the harness.

    ``select`` and ``select_super_arm`` each open a new decision round. Feedback
    arrives through ``observe_batch``; each delivery counts as one model refresh.
    """

    name = "agent"

    def __init__(self, n_arms: int, seed: int) -> None:
        if n_arms < 1:
            raise ValueError("an agent needs at least one arm")
        self.n_arms = n_arms
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.t = 0
        self.model_refreshes = 0
        self.timings = Timings()

    def score_arms(self, contexts: Sequence[FeatureVector]) -> list[ArmScore] | None:
        """Per-arm scores for this round, or None while the agent explores uniformly."""
        raise NotImplementedError

    def select(self, contexts: Sequence[FeatureVector]) -> int:
        self.t += 1
        start = time.perf_counter()
        scores = self.score_arms(contexts)
        arm = int(self.rng.integers(len(contexts))) if scores is None else select_arm(scores, self.rng)
        self.timings.scoring_seconds += time.perf_counter() - start
        return arm

    def select_super_arm(self, contexts: Sequence[FeatureVector], oracle: CombinatorialOracle) -> list[int]:
        self.t += 1
        start = time.perf_counter()
        scores = self.score_arms(contexts)
        chosen = oracle.sample(self.rng) if scores is None else select_super_arm(scores, oracle)
        self.timings.scoring_seconds += time.perf_counter() - start
        return chosen

    def observe(self, arm: int, x: FeatureVector, reward: float) -> None:
        self.observe_batch([(arm, x, reward)])

    def observe_batch(self, batch: Sequence[Observation]) -> None:
        for _, _, reward in batch:
            if not math.isfinite(reward):
                raise ValueError("observed reward must be finite")
        if not batch:
            return
        self.model_refreshes += 1
        start = time.perf_counter()
        self._ingest(batch)
        self.timings.fit_seconds += time.perf_counter() - start

    def _ingest(self, batch: Sequence[Observation]) -> None:
        raise NotImplementedError

    def checkpoint(self) -> dict[str, Any]:
        """JSON-serializable state; restoring it into a fresh agent with the same settings continues identically."""
        return {
            "format": CHECKPOINT_FORMAT,
            "name": self.name,
            "t": self.t,
            "model_refreshes": self.model_refreshes,
            "rng_state": self.rng.bit_generator.state,
            **self._state(),
        }

    def restore(self, state: Mapping[str, Any]) -> None:
        if state.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format: {state.get('format')!r}")
        self.t = int(state["t"])
        self.model_refreshes = int(state["model_refreshes"])
        self.rng.bit_generator.state = state["rng_state"]
        self._load_state(state)

    def _state(self) -> dict[str, Any]:
        return {}

    def _load_state(self, state: Mapping[str, Any]) -> None:
        return None


class TreeEnsembleAgent(BanditAgent):
    """TEUCB / TETS: tree-ensemble posterior, logarithmic rebuilds, incremental leaf updates."""

    def __init__(
        self,
        schema: FeatureSchema,
        ensemble: EnsembleConfig,
        policy: PolicyConfig,
        n_arms: int,
        seed: int,
        name: str | None = None,
    ) -> None:
        super().__init__(n_arms, seed)
        self.schema = schema
        self.ensemble = ensemble
        self.policy = policy
        self.name = name or f"te{policy.method}-{ensemble.trainer}"
        self.initial_rounds = resolve_initial_rounds(policy, n_arms)
        self.history = History()
        self.model: EnsembleModel | None = None
        self.last_rebuild = 0
        self.rebuilds = 0

    def score_arms(self, contexts: Sequence[FeatureVector]) -> list[ArmScore] | None:
        if self.model is None or self.t <= self.initial_rounds:
            return None
        mu, var, count = posterior_batch(self.model, FeatureMatrix.from_vectors(contexts, self.schema))
        nu = self.policy.exploration
        scores = []
        for arm, (m, v, c) in enumerate(zip(mu, var, count)):
            p = ArmPosterior(float(m), float(v), int(c))
            if self.policy.method == "ucb":
                # ln(1) = 0 makes the first scored round greedy.
                score = ucb_score(p, self.t, nu) if self.t >= 2 else p.mu
            else:
                score = ts_sample(p, nu, self.rng)
            scores.append(ArmScore(arm, score, p))
        return scores

    def _ingest(self, batch: Sequence[Observation]) -> None:
        for _, x, reward in batch:
            self.schema.check(x)
            self.history.append(x, reward)
        self.history.t = self.t
        if len(self.history) < 2 * MIN_LEAF:
            return
        t = max(self.t, 1)
        if self.model is None:
            if t >= self.initial_rounds:
                self._rebuild(t)
            return
        if self.policy.refit_every_round or should_rebuild(t, self.last_rebuild, self.policy.rebuild_coefficient):
            self._rebuild(t)
            return
        for _, x, reward in batch:
            update_model(self.model, x, reward)

    def _rebuild(self, t: int) -> None:
        # Derive each rebuild's trainer seed from the agent stream so runs stay reproducible.
        seed = int(self.rng.integers(2**63 - 1))
        config = self.ensemble.model_copy(update={"seed": seed})
        self.model = fit_ensemble(self.history.sample_set(self.schema), config)
        self.last_rebuild = rebuild_value(t, self.policy.rebuild_coefficient)
        self.rebuilds += 1
        logger.debug(
            "Rebuilt ensemble: agent=%s t=%s schedule=%s samples=%s",
            self.name,
            t,
            self.last_rebuild,
            len(self.history),
        )

    def _state(self) -> dict[str, Any]:
        """History, model dump and rebuild-schedule position."""
        return {
            "last_rebuild": self.last_rebuild,
            "rebuilds": self.rebuilds,
            "history": self.history.to_dict(),
            "model": None if self.model is None else dump_model(self.model),
        }

    def _load_state(self, state: Mapping[str, Any]) -> None:
        self.last_rebuild = int(state["last_rebuild"])
        self.rebuilds = int(state["rebuilds"])
        self.history = History.from_dict(state["history"], self.schema)
        self.model = None if state["model"] is None else load_model(state["model"])
