"""
CART-style regression trees whose leaves carry (o, s², c).

Single responsibility: feature containers (schema, vectors, matrices, samples),
greedy variance-reduction fitting, leaf routing, and per-leaf statistics that
support both batch assignment and incremental per-sample updates.

Trees are stored as flat node arrays. Node 0 is the root and a leaf id is the
index of the leaf node, so a root-only tree always answers leaf 0.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

logger = logging.getLogger(__name__)

# No leaf may hold fewer than two training samples (sample variance must exist).
MIN_LEAF = 2
VARIANCE_TOLERANCE = 1e-12

LEAF = 0
NUMERIC = 1
CATEGORICAL = 2
_KIND_NAMES = {LEAF: "leaf", NUMERIC: "numeric", CATEGORICAL: "categorical"}
_KIND_CODES = {name: code for code, name in _KIND_NAMES.items()}


class SchemaMismatchError(ValueError):
    """A feature vector or sample set does not conform to the expected schema."""


class FeatureSchema(BaseModel):
    """Layout of a mixed numeric/categorical context vector."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    numeric_count: int = Field(default=0, ge=0, description="Number of real-valued features.")
    categorical_cardinalities: tuple[int, ...] = Field(
        default=(),
        description="Number of categories per categorical feature, in order.",
    )

    @field_validator("categorical_cardinalities")
    @classmethod
    def validate_cardinalities(cls, v: tuple[int, ...]) -> tuple[int, ...]:
        if any(c < 2 for c in v):
            raise ValueError("every categorical feature needs at least 2 categories")
        return v

    @model_validator(mode="after")
    def at_least_one_feature(self) -> "FeatureSchema":
        if self.numeric_count + len(self.categorical_cardinalities) < 1:
            raise ValueError("schema must declare at least one feature")
        return self

    @property
    def categorical_count(self) -> int:
        return len(self.categorical_cardinalities)

    @property
    def n_features(self) -> int:
        return self.numeric_count + self.categorical_count

    @property
    def schema_id(self) -> str:
        """Stable identifier, e.g. ``n3-c2.4`` for 3 numeric and cardinalities (2, 4)."""
        cats = ".".join(str(c) for c in self.categorical_cardinalities) or "0"
        return f"n{self.numeric_count}-c{cats}"

    def vector(
        self, numeric: Sequence[float] = (), categorical: Sequence[int] = ()
    ) -> "FeatureVector":
        """Build a validated FeatureVector bound to this schema."""
        x = FeatureVector(np.asarray(numeric, dtype=np.float64), np.asarray(categorical, dtype=np.int64), self.schema_id)
        self.check(x)
        return x

    def check(self, x: "FeatureVector") -> None:
        """Raise SchemaMismatchError unless x conforms to this schema."""
        if x.schema_id != self.schema_id:
            raise SchemaMismatchError(
                f"schema mismatch: vector bound to {x.schema_id}, expected {self.schema_id}"
            )
        if x.numeric.shape != (self.numeric_count,) or x.categorical.shape != (self.categorical_count,):
            raise SchemaMismatchError(
                f"schema mismatch: got {x.numeric.size} numeric/{x.categorical.size} categorical, "
                f"expected {self.numeric_count}/{self.categorical_count}"
            )
        if self.categorical_count and np.any(x.categorical >= np.asarray(self.categorical_cardinalities)):
            raise SchemaMismatchError("schema mismatch: category code out of range")


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """Context of one arm: numeric values, categorical codes, and the schema they follow."""

    numeric: np.ndarray
    categorical: np.ndarray
    schema_id: str

    def __post_init__(self) -> None:
        numeric = np.asarray(self.numeric, dtype=np.float64).reshape(-1)
        categorical = np.asarray(self.categorical, dtype=np.int64).reshape(-1)
        if not np.all(np.isfinite(numeric)):
            raise ValueError("numeric feature values must be finite")
        if np.any(categorical < 0):
            raise ValueError("category codes must be non-negative")
        object.__setattr__(self, "numeric", numeric)
        object.__setattr__(self, "categorical", categorical)


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Row-stacked feature vectors sharing one schema."""

    numeric: np.ndarray
    categorical: np.ndarray
    schema: FeatureSchema

    def __post_init__(self) -> None:
        numeric = np.asarray(self.numeric, dtype=np.float64)
        categorical = np.asarray(self.categorical, dtype=np.int64)
        if numeric.ndim != 2 or categorical.ndim != 2:
            raise SchemaMismatchError("schema mismatch: feature matrices must be two-dimensional")
        if numeric.shape[1] != self.schema.numeric_count or categorical.shape[1] != self.schema.categorical_count:
            raise SchemaMismatchError(
                f"schema mismatch: matrix columns {numeric.shape[1]}/{categorical.shape[1]}, "
                f"expected {self.schema.numeric_count}/{self.schema.categorical_count}"
            )
        if numeric.shape[0] != categorical.shape[0]:
            raise SchemaMismatchError("schema mismatch: numeric and categorical row counts differ")
        if not np.all(np.isfinite(numeric)):
            raise ValueError("numeric feature values must be finite")
        object.__setattr__(self, "numeric", numeric)
        object.__setattr__(self, "categorical", categorical)

    def __len__(self) -> int:
        return self.numeric.shape[0]

    @classmethod
    def from_vectors(cls, vectors: Sequence[FeatureVector], schema: FeatureSchema) -> "FeatureMatrix":
        for x in vectors:
            schema.check(x)
        n = len(vectors)
        numeric = np.array([x.numeric for x in vectors], dtype=np.float64).reshape(n, schema.numeric_count)
        categorical = np.array([x.categorical for x in vectors], dtype=np.int64).reshape(
            n, schema.categorical_count
        )
        return cls(numeric, categorical, schema)

    def row(self, i: int) -> FeatureVector:
        return FeatureVector(self.numeric[i].copy(), self.categorical[i].copy(), self.schema.schema_id)

    def take(self, indices: np.ndarray) -> "FeatureMatrix":
        return FeatureMatrix(self.numeric[indices], self.categorical[indices], self.schema)


@dataclass(frozen=True)
class Sample:
    """A context and its target (observed reward, or a residual during boosting)."""

    x: FeatureVector
    target: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.target):
            raise ValueError("sample target must be finite")


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Matrix form of a list of samples, used by every trainer."""

    X: FeatureMatrix
    y: np.ndarray

    def __post_init__(self) -> None:
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if y.shape[0] != len(self.X):
            raise ValueError("targets and contexts differ in length")
        if not np.all(np.isfinite(y)):
            raise ValueError("sample targets must be finite")
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def schema(self) -> FeatureSchema:
        return self.X.schema

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], schema: FeatureSchema | None = None) -> "SampleSet":
        if not samples:
            raise ValueError("insufficient samples: got 0")
        if schema is None:
            first = samples[0].x
            schema = _schema_from_vector(first)
        if any(s.x.schema_id != schema.schema_id for s in samples):
            raise SchemaMismatchError("schema mismatch: samples do not share one schema")
        X = FeatureMatrix.from_vectors([s.x for s in samples], schema)
        return cls(X, np.array([s.target for s in samples], dtype=np.float64))

    def take(self, indices: np.ndarray) -> "SampleSet":
        return SampleSet(self.X.take(indices), self.y[indices])


def _schema_from_vector(x: FeatureVector) -> FeatureSchema:
    """Recover a schema from a vector's schema id (cardinalities are encoded in the id)."""
    try:
        num_part, cat_part = x.schema_id.split("-c")
        cards = () if cat_part == "0" else tuple(int(c) for c in cat_part.split("."))
        schema = FeatureSchema(numeric_count=int(num_part[1:]), categorical_cardinalities=cards)
    except (ValueError, IndexError) as e:
        raise SchemaMismatchError(f"schema mismatch: unparsable schema id {x.schema_id!r}") from e
    schema.check(x)
    return schema


def as_sample_set(data: "Sequence[Sample] | SampleSet") -> SampleSet:
    """Normalize a list of samples or a SampleSet to a SampleSet."""
    if isinstance(data, SampleSet):
        return data
    return SampleSet.from_samples(list(data))


class TreeConfig(BaseModel):
    """Growth limits for a single regression tree."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    max_depth: int = Field(default=10, ge=0, description="Maximum root-to-leaf path length.")
    max_features: int | None = Field(
        default=None,
        ge=1,
        description="Features drawn (without replacement) from the random source; None uses all.",
    )


@dataclass(frozen=True)
class SplitRule:
    """Test at an internal node: numeric ``value <= threshold`` or categorical ``code == category``."""

    feature_kind: Literal["numeric", "categorical"]
    feature_index: int
    threshold: float = 0.0
    category_code: int = 0

    def goes_left(self, x: FeatureVector) -> bool:
        if self.feature_kind == "numeric":
            return bool(x.numeric[self.feature_index] <= self.threshold)
        return bool(x.categorical[self.feature_index] == self.category_code)


@dataclass(frozen=True)
class LeafStats:
    """Leaf triple (o, s², c) derived from running sums."""

    count: int
    sum: float
    sum_sq: float

    @property
    def mean(self) -> float:
        if self.count < 1:
            raise ValueError("empty leaf has no mean")
        return self.sum / self.count

    @property
    def variance(self) -> float:
        return leaf_variance(self.count, self.sum, self.sum_sq)


def leaf_variance(count: int, total: float, total_sq: float) -> float:
    """Sample variance from running sums, clamped at zero within a relative tolerance."""
    if count < MIN_LEAF:
        raise ValueError("undefined leaf variance: fewer than 2 contributions")
    s2 = (total_sq - total * total / count) / (count - 1)
    if s2 < 0.0:
        if s2 < -VARIANCE_TOLERANCE * max(1.0, total_sq):
            raise RuntimeError(f"leaf variance {s2!r} is negative beyond tolerance")
        return 0.0
    return s2


@dataclass
class _NodeBuffer:
    """Growable node lists used while a tree is being grown or repaired."""

    kind: list[int] = field(default_factory=list)
    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    category: list[int] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    depth: list[int] = field(default_factory=list)
    count: list[int] = field(default_factory=list)
    total: list[float] = field(default_factory=list)
    total_sq: list[float] = field(default_factory=list)

    def add(self, depth: int) -> int:
        self.kind.append(LEAF)
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.category.append(-1)
        self.left.append(-1)
        self.right.append(-1)
        self.depth.append(depth)
        self.count.append(0)
        self.total.append(0.0)
        self.total_sq.append(0.0)
        return len(self.kind) - 1


class RegressionTree:
    """A fitted regression tree with (count, sum, sum_sq) kept at every leaf."""

    def __init__(self, schema: FeatureSchema, buffer: _NodeBuffer) -> None:
        self.schema = schema
        self._load(buffer)

    def _load(self, buffer: _NodeBuffer) -> None:
        self.kind = np.asarray(buffer.kind, dtype=np.int8)
        self.feature = np.asarray(buffer.feature, dtype=np.int64)
        self.threshold = np.asarray(buffer.threshold, dtype=np.float64)
        self.category = np.asarray(buffer.category, dtype=np.int64)
        self.left = np.asarray(buffer.left, dtype=np.int64)
        self.right = np.asarray(buffer.right, dtype=np.int64)
        self.node_depth = np.asarray(buffer.depth, dtype=np.int64)
        self.count = np.asarray(buffer.count, dtype=np.int64)
        self.total = np.asarray(buffer.total, dtype=np.float64)
        self.total_sq = np.asarray(buffer.total_sq, dtype=np.float64)
        self._refresh_derived()

    @property
    def n_nodes(self) -> int:
        return int(self.kind.shape[0])

    @property
    def depth(self) -> int:
        return int(self.node_depth.max()) if self.n_nodes else 0

    @property
    def schema_id(self) -> str:
        return self.schema.schema_id

    def leaf_ids(self) -> np.ndarray:
        return np.flatnonzero(self.kind == LEAF)

    def is_leaf(self, node: int) -> bool:
        return 0 <= node < self.n_nodes and self.kind[node] == LEAF

    def split_rule(self, node: int) -> SplitRule | None:
        if self.kind[node] == NUMERIC:
            return SplitRule("numeric", int(self.feature[node]), threshold=float(self.threshold[node]))
        if self.kind[node] == CATEGORICAL:
            return SplitRule("categorical", int(self.feature[node]), category_code=int(self.category[node]))
        return None

    def leaf_stats(self, leaf_id: int) -> LeafStats:
        if not self.is_leaf(leaf_id):
            raise ValueError(f"leaf {leaf_id} does not exist")
        return LeafStats(int(self.count[leaf_id]), float(self.total[leaf_id]), float(self.total_sq[leaf_id]))

    def _refresh_derived(self) -> None:
        """Recompute cached leaf means and variances (NaN where undefined)."""
        counts = self.count.astype(np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            self.leaf_mean = np.where(counts > 0, self.total / np.maximum(counts, 1.0), np.nan)
        defined = (self.kind == LEAF) & (self.count >= MIN_LEAF)
        c = np.where(defined, counts, 2.0)
        s2 = (self.total_sq - self.total * self.total / c) / (c - 1.0)
        too_negative = defined & (s2 < -VARIANCE_TOLERANCE * np.maximum(1.0, self.total_sq))
        if too_negative.any():
            raise RuntimeError(f"leaf variance is negative beyond tolerance at nodes {np.flatnonzero(too_negative)}")
        self.leaf_var = np.where(defined, np.maximum(s2, 0.0), np.nan)

    def _refresh_leaf(self, leaf_id: int) -> None:
        c = int(self.count[leaf_id])
        self.leaf_mean[leaf_id] = self.total[leaf_id] / c if c > 0 else np.nan
        self.leaf_var[leaf_id] = (
            leaf_variance(c, float(self.total[leaf_id]), float(self.total_sq[leaf_id])) if c >= MIN_LEAF else np.nan
        )

    def apply(self, X: FeatureMatrix) -> np.ndarray:
        """Route every row of X to its leaf; returns leaf ids."""
        if X.schema.schema_id != self.schema_id:
            raise SchemaMismatchError(f"schema mismatch: matrix {X.schema.schema_id}, tree {self.schema_id}")
        node = np.zeros(len(X), dtype=np.int64)
        for _ in range(self.depth):
            active = np.flatnonzero(self.kind[node] != LEAF)
            if active.size == 0:
                break
            current = node[active]
            kinds = self.kind[current]
            feats = self.feature[current]
            go_left = np.empty(active.size, dtype=bool)
            num = kinds == NUMERIC
            if num.any():
                go_left[num] = X.numeric[active[num], feats[num]] <= self.threshold[current[num]]
            cat = ~num
            if cat.any():
                go_left[cat] = X.categorical[active[cat], feats[cat]] == self.category[current[cat]]
            node[active] = np.where(go_left, self.left[current], self.right[current])
        return node

    def set_leaf_stats(self, leaf_ids: np.ndarray, contributions: np.ndarray) -> None:
        """Replace every leaf's statistics by the aggregate of the given per-sample contributions."""
        self.count = np.bincount(leaf_ids, minlength=self.n_nodes).astype(np.int64)
        self.total = np.bincount(leaf_ids, weights=contributions, minlength=self.n_nodes)
        self.total_sq = np.bincount(leaf_ids, weights=contributions * contributions, minlength=self.n_nodes)
        self._refresh_derived()

    def collapse_leaf(self, leaf_id: int) -> None:
        """Remove a leaf by promoting its sibling subtree into the parent's place."""
        self.collapse_leaves([leaf_id])

    def collapse_leaves(self, leaf_ids: Sequence[int]) -> None:
        """Collapse several leaves with pairwise unrelated parents, then renumber nodes."""
        parent = self._parents()
        for leaf_id in leaf_ids:
            p = int(parent[leaf_id])
            if p < 0:
                raise ValueError("cannot collapse the root leaf")
            sibling = int(self.right[p] if self.left[p] == leaf_id else self.left[p])
            for arr in (self.kind, self.feature, self.threshold, self.category, self.left, self.right,
                        self.count, self.total, self.total_sq):
                arr[p] = arr[sibling]
        self._compact()

    def _parents(self) -> np.ndarray:
        parent = np.full(self.n_nodes, -1, dtype=np.int64)
        internal = np.flatnonzero(self.kind != LEAF)
        parent[self.left[internal]] = internal
        parent[self.right[internal]] = internal
        return parent

    def _compact(self) -> None:
        """Renumber reachable nodes in preorder and recompute depths."""
        buffer = _NodeBuffer()
        stack: list[tuple[int, int, int, bool]] = [(0, 0, -1, True)]
        while stack:
            old, depth, new_parent, is_left = stack.pop()
            new = buffer.add(depth)
            if new_parent >= 0:
                if is_left:
                    buffer.left[new_parent] = new
                else:
                    buffer.right[new_parent] = new
            buffer.kind[new] = int(self.kind[old])
            buffer.feature[new] = int(self.feature[old])
            buffer.threshold[new] = float(self.threshold[old])
            buffer.category[new] = int(self.category[old])
            buffer.count[new] = int(self.count[old])
            buffer.total[new] = float(self.total[old])
            buffer.total_sq[new] = float(self.total_sq[old])
            if self.kind[old] != LEAF:
                stack.append((int(self.right[old]), depth + 1, new, False))
                stack.append((int(self.left[old]), depth + 1, new, True))
        self._load(buffer)

    def to_dict(self) -> dict:
        nodes = []
        for i in range(self.n_nodes):
            node = {
                "kind": _KIND_NAMES[int(self.kind[i])],
                "feature_index": int(self.feature[i]),
                "threshold": float(self.threshold[i]),
                "category": int(self.category[i]),
                "left": int(self.left[i]),
                "right": int(self.right[i]),
                "depth": int(self.node_depth[i]),
                "count": int(self.count[i]),
                "sum": float(self.total[i]),
                "sum_sq": float(self.total_sq[i]),
                "value": float(self.leaf_mean[i]) if self.count[i] > 0 else None,
            }
            nodes.append(node)
        return {"schema": self.schema.model_dump(mode="json"), "nodes": nodes}

    @classmethod
    def from_dict(cls, data: dict) -> "RegressionTree":
        schema = FeatureSchema.model_validate(data["schema"])
        buffer = _NodeBuffer()
        for node in data["nodes"]:
            i = buffer.add(int(node["depth"]))
            buffer.kind[i] = _KIND_CODES[node["kind"]]
            buffer.feature[i] = int(node["feature_index"])
            buffer.threshold[i] = float(node["threshold"])
            buffer.category[i] = int(node["category"])
            buffer.left[i] = int(node["left"])
            buffer.right[i] = int(node["right"])
            buffer.count[i] = int(node["count"])
            buffer.total[i] = float(node["sum"])
            buffer.total_sq[i] = float(node["sum_sq"])
        return cls(schema, buffer)


def assign_leaf(tree: RegressionTree, x: FeatureVector) -> int:
    """Return the unique leaf reached by applying the split tests from the root."""
    tree.schema.check(x)
    node = 0
    while tree.kind[node] != LEAF:
        if tree.kind[node] == NUMERIC:
            left = x.numeric[tree.feature[node]] <= tree.threshold[node]
        else:
            left = x.categorical[tree.feature[node]] == tree.category[node]
        node = int(tree.left[node] if left else tree.right[node])
    return node


def update_leaf(tree: RegressionTree, leaf_id: int, contribution: float) -> None:
    """Add one contribution to a leaf's running sums."""
    if not tree.is_leaf(leaf_id):
        raise ValueError(f"leaf {leaf_id} does not exist")
    if not math.isfinite(contribution):
        raise ValueError("leaf contribution must be finite")
    tree.count[leaf_id] += 1
    tree.total[leaf_id] += contribution
    tree.total_sq[leaf_id] += contribution * contribution
    tree._refresh_leaf(leaf_id)


def fit_tree(samples: "Sequence[Sample] | SampleSet", config: TreeConfig, rng: np.random.Generator) -> RegressionTree:
    """Grow a tree by greedy variance reduction; leaves aggregate their samples' targets."""
    data = as_sample_set(samples)
    return fit_tree_arrays(data.X, data.y, config, rng)


def fit_tree_arrays(
    X: FeatureMatrix, y: np.ndarray, config: TreeConfig, rng: np.random.Generator
) -> RegressionTree:
    """Array-level tree fitting shared by every trainer."""
    n = len(X)
    if n < 2 * MIN_LEAF:
        raise ValueError(f"insufficient samples: need at least {2 * MIN_LEAF}, got {n}")
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise ValueError("sample targets must be finite")

    schema = X.schema
    features = np.arange(schema.n_features)
    if config.max_features is not None and config.max_features < schema.n_features:
        features = np.sort(rng.choice(schema.n_features, size=config.max_features, replace=False))
    numeric_features = [int(f) for f in features if f < schema.numeric_count]
    categorical_features = [int(f) - schema.numeric_count for f in features if f >= schema.numeric_count]

    buffer = _NodeBuffer()
    root = buffer.add(0)
    stack: list[tuple[int, np.ndarray]] = [(root, np.arange(n))]
    while stack:
        node, idx = stack.pop()
        yn = y[idx]
        buffer.count[node] = int(idx.size)
        buffer.total[node] = float(yn.sum())
        buffer.total_sq[node] = float(np.dot(yn, yn))
        if buffer.depth[node] >= config.max_depth or idx.size < 2 * MIN_LEAF:
            continue
        centred = yn - yn.mean()
        parent_sse = float(np.dot(centred, centred))
        if parent_sse / idx.size <= VARIANCE_TOLERANCE:
            continue
        split = _best_split(X, idx, centred, parent_sse, numeric_features, categorical_features)
        if split is None:
            continue
        kind, feat, value, go_left = split
        buffer.kind[node] = kind
        buffer.feature[node] = feat
        if kind == NUMERIC:
            buffer.threshold[node] = value
        else:
            buffer.category[node] = int(value)
        left = buffer.add(buffer.depth[node] + 1)
        right = buffer.add(buffer.depth[node] + 1)
        buffer.left[node] = left
        buffer.right[node] = right
        stack.append((right, idx[~go_left]))
        stack.append((left, idx[go_left]))
    tree = RegressionTree(schema, buffer)
    # Preorder numbering keeps dumps independent of the stack discipline above.
    tree._compact()
    logger.debug("Fitted tree: samples=%s nodes=%s depth=%s", n, tree.n_nodes, tree.depth)
    return tree


def _first_near_max(gain: np.ndarray, tol: float) -> int:
    """Lowest position whose gain is within tol of the maximum."""
    return int(np.flatnonzero(gain >= gain.max() - tol)[0])


def _best_split(
    X: FeatureMatrix,
    idx: np.ndarray,
    centred: np.ndarray,
    parent_sse: float,
    numeric_features: list[int],
    categorical_features: list[int],
) -> tuple[int, int, float, np.ndarray] | None:
    """Exhaustive split search; ties go to the lowest feature index, then lowest threshold/code.

    Gains within ``VARIANCE_TOLERANCE * parent_sse`` of each other count as equal, so the
    choice does not depend on rounding and is unchanged when targets are rescaled.
    """
    n = idx.size
    total = float(centred.sum())
    tol = VARIANCE_TOLERANCE * parent_sse
    best_gain = 0.0
    best: tuple[int, int, float] | None = None

    for f in numeric_features:
        values = X.numeric[idx, f]
        order = np.argsort(values, kind="stable")
        sorted_values = values[order]
        ys = centred[order]
        left_sum = np.cumsum(ys)[:-1]
        left_sq = np.cumsum(ys * ys)[:-1]
        left_n = np.arange(1, n, dtype=np.float64)
        right_n = n - left_n
        valid = (sorted_values[:-1] < sorted_values[1:]) & (left_n >= MIN_LEAF) & (right_n >= MIN_LEAF)
        if not valid.any():
            continue
        right_sum = total - left_sum
        right_sq = parent_sse - left_sq
        sse = (left_sq - left_sum * left_sum / left_n) + (right_sq - right_sum * right_sum / right_n)
        gain = np.where(valid, parent_sse - sse, -np.inf)
        pos = _first_near_max(gain, tol)
        if gain[pos] > best_gain + tol:
            lo, hi = float(sorted_values[pos]), float(sorted_values[pos + 1])
            threshold = 0.5 * (lo + hi)
            if not threshold < hi:
                threshold = lo
            best_gain = float(gain[pos])
            best = (NUMERIC, f, threshold)

    for f in categorical_features:
        codes = X.categorical[idx, f]
        size = int(codes.max()) + 1
        cnt = np.bincount(codes, minlength=size).astype(np.float64)
        s = np.bincount(codes, weights=centred, minlength=size)
        sq = np.bincount(codes, weights=centred * centred, minlength=size)
        valid = (cnt >= MIN_LEAF) & (n - cnt >= MIN_LEAF)
        if not valid.any():
            continue
        safe_cnt = np.where(valid, cnt, 1.0)
        safe_rest = np.where(valid, n - cnt, 1.0)
        sse = (sq - s * s / safe_cnt) + ((parent_sse - sq) - (total - s) ** 2 / safe_rest)
        gain = np.where(valid, parent_sse - sse, -np.inf)
        code = _first_near_max(gain, tol)
        if gain[code] > best_gain + tol:
            best_gain = float(gain[code])
            best = (CATEGORICAL, f, float(code))

    if best is None:
        return None
    kind, feat, value = best
    if kind == NUMERIC:
        go_left = X.numeric[idx, feat] <= value
    else:
        go_left = X.categorical[idx, feat] == int(value)
    return kind, feat, value, go_left
