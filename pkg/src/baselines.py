"""
Comparison agents: LinUCB, LinTS, UCB1-Normal, TreeBootstrap, plus random and oracle references.

All agents implement the BanditAgent protocol from policies so the harness can drive them
interchangeably on both environments.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Literal, Mapping, Sequence

import numpy as np

from ensembles import EnsembleConfig, EnsembleModel, dump_model, fit_ensemble, load_model, predict_batch
from policies import ArmScore, BanditAgent, History, Observation
from tree_core import MIN_LEAF, FeatureMatrix, FeatureSchema, FeatureVector, SampleSet

logger = logging.getLogger(__name__)


class LinearArmModel:
    """Ridge regression state with A⁻¹ maintained by Sherman–Morrison updates."""

    def __init__(self, dim: int, ridge: float = 1.0) -> None:
        if dim < 1:
            raise ValueError("linear model dimension must be positive")
        if ridge <= 0.0:
            raise ValueError("ridge parameter must be positive")
        self.dim = dim
        self.ridge = ridge
        self.A = np.eye(dim) * ridge
        self.A_inv = np.eye(dim) / ridge
        self.b = np.zeros(dim)

    @property
    def theta(self) -> np.ndarray:
        return self.A_inv @ self.b

    def update(self, x: np.ndarray, reward: float) -> None:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ValueError(f"schema mismatch: expected {self.dim} features, got {x.shape}")
        Ax = self.A_inv @ x
        denom = 1.0 + float(x @ Ax)
        if denom <= 0.0:
            raise RuntimeError("design matrix lost positive definiteness")
        self.A_inv -= np.outer(Ax, Ax) / denom
        self.A += np.outer(x, x)
        self.b += reward * x

    def to_dict(self) -> dict[str, Any]:
        return {"A": self.A.tolist(), "A_inv": self.A_inv.tolist(), "b": self.b.tolist()}

    def load(self, data: Mapping[str, Any]) -> None:
        A = np.asarray(data["A"], dtype=np.float64)
        if A.shape != (self.dim, self.dim):
            raise ValueError(f"schema mismatch: checkpoint has a {A.shape} design matrix, expected dimension {self.dim}")
        self.A = A
        self.A_inv = np.asarray(data["A_inv"], dtype=np.float64)
        self.b = np.asarray(data["b"], dtype=np.float64)


def linucb_score(m: LinearArmModel, x: np.ndarray, alpha: float) -> float:
    """θᵀx + α·sqrt(xᵀA⁻¹x)."""
    x = np.asarray(x, dtype=np.float64)
    width = float(x @ m.A_inv @ x)
    return float(m.theta @ x) + alpha * math.sqrt(max(width, 0.0))


def sample_theta(m: LinearArmModel, scale: float, rng: np.random.Generator) -> np.ndarray:
    """θ̃ ~ N(θ, scale² A⁻¹); a zero scale returns θ without consuming randomness."""
    theta = m.theta
    if scale == 0.0:
        return theta
    cov = 0.5 * (m.A_inv + m.A_inv.T)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as e:
        raise RuntimeError("inverse design matrix is not positive definite") from e
    return theta + scale * (chol @ rng.standard_normal(m.dim))


def lints_sample(m: LinearArmModel, x: np.ndarray, scale: float, rng: np.random.Generator) -> float:
    return float(sample_theta(m, scale, rng) @ np.asarray(x, dtype=np.float64))


class LinearAgent(BanditAgent):
    """LinUCB or LinTS over one ridge model of dense (disjoint-encoded) context vectors."""

    def __init__(
        self,
        method: Literal["ucb", "ts"],
        dim: int,
        n_arms: int,
        seed: int,
        alpha: float = 1.0,
        scale: float = 1.0,
        ridge: float = 1.0,
        encode: Callable[[FeatureVector], np.ndarray] | None = None,
        name: str | None = None,
    ) -> None:
        super().__init__(n_arms, seed)
        self.method = method
        self.alpha = alpha
        self.scale = scale
        self.model = LinearArmModel(dim, ridge)
        self.encode = encode or (lambda x: x.numeric)
        self.name = name or ("linucb" if method == "ucb" else "lints")

    def score_arms(self, contexts: Sequence[FeatureVector]) -> list[ArmScore]:
        dense = np.stack([self.encode(x) for x in contexts])
        if self.method == "ucb":
            widths = np.einsum("ij,jk,ik->i", dense, self.model.A_inv, dense)
            values = dense @ self.model.theta + self.alpha * np.sqrt(np.maximum(widths, 0.0))
        else:
            values = dense @ sample_theta(self.model, self.scale, self.rng)
        return [ArmScore(arm, float(v)) for arm, v in enumerate(values)]

    def _ingest(self, batch: Sequence[Observation]) -> None:
        for _, x, reward in batch:
            self.model.update(self.encode(x), reward)

    def _state(self) -> dict[str, Any]:
        return {"linear_model": self.model.to_dict()}

    def _load_state(self, state: Mapping[str, Any]) -> None:
        self.model.load(state["linear_model"])


def ucb1_normal_score(sample_mean: float, sample_var: float, m: int, t: int) -> float:
    """μ̂ + sqrt(16 σ̂² ln(t − 1) / m)."""
    if m < 2:
        raise ValueError("arm must be played twice before it can be scored")
    if t < 2:
        raise ValueError(f"ucb1_normal_score needs t >= 2, got {t}")
    return sample_mean + math.sqrt(16.0 * max(sample_var, 0.0) * math.log(t - 1) / m)


class UCB1NormalAgent(BanditAgent):
    """Context-free UCB1-Normal; arms played fewer than twice are forced first."""

    name = "ucb1_normal"

    def __init__(self, n_arms: int, seed: int, name: str | None = None) -> None:
        super().__init__(n_arms, seed)
        self.plays = np.zeros(n_arms, dtype=np.int64)
        self.total = np.zeros(n_arms)
        self.total_sq = np.zeros(n_arms)
        if name:
            self.name = name

    def score_arms(self, contexts: Sequence[FeatureVector]) -> list[ArmScore]:
        forced = np.flatnonzero(self.plays < MIN_LEAF)
        if forced.size:
            return [ArmScore(int(a), 0.0) for a in forced]
        scores = []
        for arm in range(self.n_arms):
            m = int(self.plays[arm])
            mean = self.total[arm] / m
            var = (self.total_sq[arm] - m * mean * mean) / (m - 1)
            scores.append(ArmScore(arm, ucb1_normal_score(mean, var, m, max(self.t, 2))))
        return scores

    def _ingest(self, batch: Sequence[Observation]) -> None:
        for arm, _, reward in batch:
            self.plays[arm] += 1
            self.total[arm] += reward
            self.total_sq[arm] += reward * reward

    def _state(self) -> dict[str, Any]:
        return {"plays": self.plays.tolist(), "total": self.total.tolist(), "total_sq": self.total_sq.tolist()}

    def _load_state(self, state: Mapping[str, Any]) -> None:
        self.plays = np.asarray(state["plays"], dtype=np.int64)
        self.total = np.asarray(state["total"], dtype=np.float64)
        self.total_sq = np.asarray(state["total_sq"], dtype=np.float64)


@dataclass
class PerArmTreeModel:
    """One arm's history and the model last fitted on a bootstrap resample of it."""

    arm_id: int
    history: History = field(default_factory=History)
    model: EnsembleModel | None = None
    fallback: float | None = None

    def refit(self, schema: FeatureSchema, config: EnsembleConfig, rng: np.random.Generator) -> None:
        n = len(self.history)
        if n == 0:
            raise ValueError(f"arm {self.arm_id} has no history to resample")
        idx = rng.integers(n, size=n)
        rewards = np.asarray(self.history.rewards)[idx]
        if n < 2 * MIN_LEAF:
            self.model = None
            self.fallback = float(rewards.mean())
            return
        X = FeatureMatrix.from_vectors(self.history.contexts, schema).take(idx)
        seed = int(rng.integers(2**63 - 1))
        self.model = fit_ensemble(SampleSet(X, rewards), config.model_copy(update={"seed": seed}))
        self.fallback = None

    def predict(self, X: FeatureMatrix) -> np.ndarray:
        if self.model is None:
            if self.fallback is None:
                raise ValueError(f"arm {self.arm_id} has not been fitted")
            return np.full(len(X), self.fallback)
        return predict_batch(self.model, X)


def bootstrap_backend_config(
    backend: Literal["tree", "forest", "boosting"], ensemble: EnsembleConfig
) -> EnsembleConfig:
    """Ensemble settings for a TreeBootstrap backend; the outer resample already bootstraps."""
    if backend == "tree":
        return ensemble.model_copy(
            update={"n_trees": 1, "trainer": "bagging", "bootstrap": False, "feature_fraction": 1.0, "bag_fraction": 1.0}
        )
    if backend == "forest":
        return ensemble.model_copy(update={"trainer": "bagging"})
    return ensemble.model_copy(update={"trainer": "boosting"})


class TreeBootstrapAgent(BanditAgent):
    """Bootstrapped tree models as a Thompson-sampling surrogate.

    Per-arm mode keeps one model per arm and forces unplayed arms. Shared mode fits one
    model on all observations, for base arms that are distinguished only by their contexts.
    """

    def __init__(
        self,
        schema: FeatureSchema,
        ensemble: EnsembleConfig,
        backend: Literal["tree", "forest", "boosting"],
        n_arms: int,
        seed: int,
        refit_stride: int = 1,
        shared: bool = False,
        name: str | None = None,
    ) -> None:
        super().__init__(n_arms, seed)
        if refit_stride < 1:
            raise ValueError("refit_stride must be at least 1")
        self.schema = schema
        self.config = bootstrap_backend_config(backend, ensemble)
        self.backend = backend
        self.refit_stride = refit_stride
        self.shared = shared
        self.name = name or f"treebootstrap-{backend}"
        self.models = [PerArmTreeModel(0)] if shared else [PerArmTreeModel(a) for a in range(n_arms)]
        if refit_stride > 1:
            logger.warning("TreeBootstrap refits every %s rounds instead of every round: agent=%s", refit_stride, self.name)

    def _refresh(self, model_index: int) -> None:
        model = self.models[model_index]
        due = (self.t - 1) % self.refit_stride == 0
        if due or (model.model is None and model.fallback is None):
            model.refit(self.schema, self.config, self.rng)

    def score_arms(self, contexts: Sequence[FeatureVector]) -> list[ArmScore] | None:
        if self.shared:
            if len(self.models[0].history) == 0:
                return None
            self._refresh(0)
            values = self.models[0].predict(FeatureMatrix.from_vectors(contexts, self.schema))
            return [ArmScore(arm, float(v)) for arm, v in enumerate(values)]
        unplayed = [m.arm_id for m in self.models if len(m.history) == 0]
        if unplayed:
            return [ArmScore(a, 0.0) for a in unplayed]
        scores = []
        for arm, x in enumerate(contexts):
            self._refresh(arm)
            value = self.models[arm].predict(FeatureMatrix.from_vectors([x], self.schema))[0]
            scores.append(ArmScore(arm, float(value)))
        return scores

    def _ingest(self, batch: Sequence[Observation]) -> None:
        for arm, x, reward in batch:
            self.schema.check(x)
            index = 0 if self.shared else arm
            self.models[index].history.append(x, reward)

    def _state(self) -> dict[str, Any]:
        return {
            "models": [
                {
                    "arm_id": m.arm_id,
                    "history": m.history.to_dict(),
                    "model": None if m.model is None else dump_model(m.model),
                    "fallback": m.fallback,
                }
                for m in self.models
            ]
        }

    def _load_state(self, state: Mapping[str, Any]) -> None:
        if len(state["models"]) != len(self.models):
            raise ValueError(f"checkpoint holds {len(state['models'])} models, agent has {len(self.models)}")
        self.models = [
            PerArmTreeModel(
                arm_id=int(m["arm_id"]),
                history=History.from_dict(m["history"], self.schema),
                model=None if m["model"] is None else load_model(m["model"]),
                fallback=None if m["fallback"] is None else float(m["fallback"]),
            )
            for m in state["models"]
        ]


class RandomAgent(BanditAgent):
    """Uniform random selection; a floor for regret comparisons."""

    def __init__(self, n_arms: int, seed: int, name: str | None = None) -> None:
        super().__init__(n_arms, seed)
        self.name = name or "random"

    def score_arms(self, contexts: Sequence[FeatureVector]) -> None:
        return None

    def _ingest(self, batch: Sequence[Observation]) -> None:
        return None


class OracleAgent(BanditAgent):
    """Selects by the environment's true expected reward; achieves zero regret."""

    def __init__(
        self,
        expected_rewards: Callable[[Sequence[FeatureVector]], np.ndarray],
        n_arms: int,
        seed: int,
        name: str | None = None,
    ) -> None:
        super().__init__(n_arms, seed)
        self.expected_rewards = expected_rewards
        self.name = name or "oracle"

    def score_arms(self, contexts: Sequence[FeatureVector]) -> list[ArmScore]:
        values = np.asarray(self.expected_rewards(contexts), dtype=np.float64)
        return [ArmScore(arm, float(v)) for arm, v in enumerate(values)]

    def _ingest(self, batch: Sequence[Observation]) -> None:
        return None
