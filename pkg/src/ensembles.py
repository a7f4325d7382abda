"""
Tree-ensemble trainers and the aggregated (μ̃, σ̃², c) predictor.

Single responsibility: bagged forests and gradient-boosted ensembles built from
tree_core trees, the leaf-value assignment sweeps for both trainers, incremental
observation updates, prediction/posterior, and the model dump format.
"""

import json
import logging
import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from tree_core import (
    MIN_LEAF,
    FeatureMatrix,
    FeatureSchema,
    FeatureVector,
    RegressionTree,
    Sample,
    SampleSet,
    TreeConfig,
    as_sample_set,
    assign_leaf,
    fit_tree_arrays,
    update_leaf,
)

logger = logging.getLogger(__name__)

DUMP_FORMAT = "tebandit-ensemble/1"


class EnsembleConfig(BaseModel):
    """Hyper-parameters shared by the bagging and boosting trainers."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_trees: int = Field(default=100, ge=1, description="Number of trees N.")
    max_depth: int = Field(default=10, ge=0, description="Maximum tree depth.")
    trainer: Literal["bagging", "boosting"] = Field(
        default="boosting",
        description="'bagging' builds a random forest, 'boosting' a gradient-boosted ensemble.",
    )
    learning_rate: float = Field(default=0.3, gt=0.0, le=1.0, description="Boosting learning rate η.")
    base_score: float | None = Field(
        default=None,
        description="Boosting base score b; None uses the mean of the training targets.",
    )
    bag_fraction: float = Field(default=1.0, gt=0.0, le=1.0, description="Bagging resample size as a fraction of the data.")
    bootstrap: bool = Field(default=True, description="Resample with replacement when bagging.")
    feature_fraction: float | None = Field(
        default=None,
        gt=0.0,
        le=1.0,
        description="Fraction of features per bagged tree; None applies the ceil(sqrt(d)) rule.",
    )
    seed: int = Field(default=0, description="Seed of the trainer's random source.")


@dataclass
class EnsembleModel:
    """N fitted trees plus the trainer configuration and base score."""

    trees: list[RegressionTree]
    config: EnsembleConfig
    base_score: float
    schema: FeatureSchema

    @property
    def trainer(self) -> str:
        return self.config.trainer

    @property
    def n_trees(self) -> int:
        return len(self.trees)


@dataclass(frozen=True, slots=True)
class ArmPosterior:
    """Aggregated leaf statistics for one context: mean μ̃, variance σ̃², count c."""

    mu: float
    var: float
    count: int


def _features_per_tree(config: EnsembleConfig, n_features: int) -> int:
    if config.feature_fraction is None:
        return max(1, math.ceil(math.sqrt(n_features)))
    return max(1, math.ceil(config.feature_fraction * n_features))


def fit_random_forest(data: "Sequence[Sample] | SampleSet", config: EnsembleConfig) -> EnsembleModel:
    """Fit N trees on bootstrap resamples over random feature subsets, then set leaf values on all data."""
    data = as_sample_set(data)
    n = len(data)
    if n < 2 * MIN_LEAF:
        raise ValueError(f"insufficient samples: need at least {2 * MIN_LEAF}, got {n}")
    rng = np.random.default_rng(config.seed)
    bag_size = max(2 * MIN_LEAF, int(round(config.bag_fraction * n)))
    if not config.bootstrap:
        bag_size = min(bag_size, n)
    tree_config = TreeConfig(
        max_depth=config.max_depth,
        max_features=_features_per_tree(config, data.schema.n_features),
    )
    trees = []
    for _ in range(config.n_trees):
        bag = rng.choice(n, size=bag_size, replace=config.bootstrap)
        trees.append(fit_tree_arrays(data.X.take(bag), data.y[bag], tree_config, rng))
    model = EnsembleModel(trees=trees, config=config, base_score=0.0, schema=data.schema)
    set_leaf_values_rf(model, data)
    logger.debug("Fitted random forest: trees=%s samples=%s depth=%s", config.n_trees, n, config.max_depth)
    return model


def fit_gbdt(data: "Sequence[Sample] | SampleSet", config: EnsembleConfig) -> EnsembleModel:
    """Fit trees sequentially on residuals of the prefix ensemble (squared loss)."""
    data = as_sample_set(data)
    n = len(data)
    if n < 2 * MIN_LEAF:
        raise ValueError(f"insufficient samples: need at least {2 * MIN_LEAF}, got {n}")
    rng = np.random.default_rng(config.seed)
    base_score = float(np.mean(data.y)) if config.base_score is None else float(config.base_score)
    eta = config.learning_rate
    tree_config = TreeConfig(max_depth=config.max_depth)
    staged = np.full(n, base_score)
    trees = []
    for _ in range(config.n_trees):
        residual = data.y - staged
        tree = fit_tree_arrays(data.X, residual, tree_config, rng)
        leaves = tree.apply(data.X)
        tree.set_leaf_stats(leaves, eta * residual)
        staged = staged + tree.leaf_mean[leaves]
        trees.append(tree)
    model = EnsembleModel(trees=trees, config=config, base_score=base_score, schema=data.schema)
    set_leaf_values_gbdt(model, data)
    logger.debug("Fitted boosted ensemble: trees=%s samples=%s eta=%s base=%s", config.n_trees, n, eta, base_score)
    return model


def fit_ensemble(data: "Sequence[Sample] | SampleSet", config: EnsembleConfig) -> EnsembleModel:
    """Dispatch to the trainer named in the config."""
    if config.trainer == "bagging":
        return fit_random_forest(data, config)
    return fit_gbdt(data, config)


def _route_with_repair(tree: RegressionTree, X: FeatureMatrix) -> np.ndarray:
    """Route X and collapse leaves that receive fewer than two rows until none remain."""
    while True:
        leaves = tree.apply(X)
        counts = np.bincount(leaves, minlength=tree.n_nodes)
        starved = [int(leaf) for leaf in tree.leaf_ids() if counts[leaf] < MIN_LEAF]
        if not starved:
            return leaves
        if tree.n_nodes == 1:
            raise ValueError("insufficient samples: root leaf receives fewer than 2 samples")
        parent = tree._parents()
        touched: set[int] = set()
        chosen = []
        for leaf in starved:
            p = int(parent[leaf])
            sibling = int(tree.right[p] if tree.left[p] == leaf else tree.left[p])
            if {leaf, p, sibling} & touched:
                continue
            touched.update((leaf, p, sibling))
            chosen.append(leaf)
        logger.debug("Collapsing starved leaves: count=%s nodes=%s", len(chosen), tree.n_nodes)
        tree.collapse_leaves(chosen)


def set_leaf_values_rf(model: EnsembleModel, data: "Sequence[Sample] | SampleSet") -> None:
    """Leaf values for a forest: every routed sample contributes r_i / N."""
    if model.trainer != "bagging":
        raise ValueError("set_leaf_values_rf requires a bagging-trained model")
    data = as_sample_set(data)
    contributions = data.y / model.n_trees
    for tree in model.trees:
        leaves = _route_with_repair(tree, data.X)
        tree.set_leaf_stats(leaves, contributions)


def set_leaf_values_gbdt(model: EnsembleModel, data: "Sequence[Sample] | SampleSet") -> None:
    """Leaf values for a boosted ensemble from one forward sweep of cached staged predictions.

    Tree n receives the contribution η·(r_i − p_{n−1}(x_i)) of every sample, where the
    staged prediction p_{n−1} = b + Σ_{j<n} o_j(x_i) is carried forward per sample.
    """
    if model.trainer != "boosting":
        raise ValueError("set_leaf_values_gbdt requires a boosting-trained model")
    data = as_sample_set(data)
    eta = model.config.learning_rate
    staged = np.full(len(data), model.base_score)
    for tree in model.trees:
        leaves = _route_with_repair(tree, data.X)
        tree.set_leaf_stats(leaves, eta * (data.y - staged))
        staged = staged + tree.leaf_mean[leaves]


def set_leaf_values(model: EnsembleModel, data: "Sequence[Sample] | SampleSet") -> None:
    if model.trainer == "bagging":
        set_leaf_values_rf(model, data)
    else:
        set_leaf_values_gbdt(model, data)


def posterior_batch(model: EnsembleModel, X: FeatureMatrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """μ̃ = b + Σ o_n, σ̃² = Σ s²_n / c_n and c = Σ c_n for every row of X."""
    n = len(X)
    mu = np.full(n, model.base_score)
    var = np.zeros(n)
    count = np.zeros(n, dtype=np.int64)
    for tree in model.trees:
        leaves = tree.apply(X)
        c = tree.count[leaves]
        if np.any(c < MIN_LEAF):
            raise ValueError("undefined leaf variance: visited leaf has fewer than 2 contributions")
        mu = mu + tree.leaf_mean[leaves]
        var = var + tree.leaf_var[leaves] / c
        count = count + c
    return mu, var, count


def posterior(model: EnsembleModel, x: FeatureVector) -> ArmPosterior:
    """Aggregated leaf statistics for a single context."""
    model.schema.check(x)
    mu, var, count = posterior_batch(model, FeatureMatrix.from_vectors([x], model.schema))
    return ArmPosterior(mu=float(mu[0]), var=float(var[0]), count=int(count[0]))


def predict(model: EnsembleModel, x: FeatureVector) -> float:
    """Ensemble prediction; shares the posterior code path so predict == posterior.mu."""
    return posterior(model, x).mu


def predict_batch(model: EnsembleModel, X: FeatureMatrix) -> np.ndarray:
    mu = np.full(len(X), model.base_score)
    for tree in model.trees:
        mu = mu + tree.leaf_mean[tree.apply(X)]
    return mu


def update_model(model: EnsembleModel, x: FeatureVector, target: float) -> None:
    """Fold one new observation into the leaves it reaches, keeping tree structures fixed.

    Bagging adds target / N to each tree. Boosting adds η·(target − p_{n−1}(x)) where the
    staged prediction uses each earlier tree's leaf value as it was before this update.
    """
    if not math.isfinite(target):
        raise ValueError("observed reward must be finite")
    model.schema.check(x)
    if model.trainer == "bagging":
        contribution = target / model.n_trees
        for tree in model.trees:
            update_leaf(tree, assign_leaf(tree, x), contribution)
        return
    eta = model.config.learning_rate
    staged = model.base_score
    for tree in model.trees:
        leaf = assign_leaf(tree, x)
        frozen_value = float(tree.leaf_mean[leaf])
        update_leaf(tree, leaf, eta * (target - staged))
        staged += frozen_value


def dump_model(model: EnsembleModel) -> str:
    """Serialize to JSON: config block, base score, schema, then per-tree node lists."""
    payload = {
        "format": DUMP_FORMAT,
        "config": model.config.model_dump(mode="json"),
        "base_score": model.base_score,
        "schema": model.schema.model_dump(mode="json"),
        "trees": [tree.to_dict() for tree in model.trees],
    }
    return json.dumps(payload, sort_keys=True)


def load_model(text: str) -> EnsembleModel:
    payload = json.loads(text)
    if payload.get("format") != DUMP_FORMAT:
        raise ValueError(f"unsupported model dump format: {payload.get('format')!r}")
    return EnsembleModel(
        trees=[RegressionTree.from_dict(t) for t in payload["trees"]],
        config=EnsembleConfig.model_validate(payload["config"]),
        base_score=float(payload["base_score"]),
        schema=FeatureSchema.model_validate(payload["schema"]),
    )
