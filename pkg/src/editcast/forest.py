"""Regression random forest on log-transformed targets, from scratch.

Trees fit ln(1+y) and the ensemble averages in log space before the
inverse transform, so the forest's implicit squared loss lives in the
same space as the evaluation metric. A raw-target mode is kept behind a
flag for comparison.

Splits maximize variance reduction over midpoints between consecutive
distinct sorted feature values; ties break toward the lower feature
index, then the lower threshold, so training is reproducible bit for
bit. Per-tree random streams derive from (seed, tree index), making the
result independent of any training-order scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .features import FeatureCatalog, FeatureTable, FeatureVector, TrainingExample, table_from_examples

_TREE_STREAM = 31


@dataclass(frozen=True, slots=True)
class ForestConfig:
    n_trees: int = 150
    mtry: int | None = None  # defaults to floor(k/3) at train time
    min_leaf: int = 5
    max_depth: int = 25
    bootstrap: bool = True
    log_target: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be >= 1")


@dataclass(frozen=True)
class RegressionTree:
    """Flat node arrays; feature < 0 marks a leaf carrying value."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf value for every row of X (columns in training order)."""
        pos = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            f = self.feature[pos]
            internal = f >= 0
            if not internal.any():
                break
            rows = np.flatnonzero(internal)
            go_left = X[rows, f[rows]] <= self.threshold[pos[rows]]
            pos[rows] = np.where(go_left, self.left[pos[rows]], self.right[pos[rows]])
        return self.value[pos]


@dataclass(frozen=True)
class Forest:
    config: ForestConfig
    feature_names: tuple[str, ...]
    trees: tuple[RegressionTree, ...]


def train_forest(
    dataset: Sequence[TrainingExample] | FeatureTable,
    cat: FeatureCatalog,
    cfg: ForestConfig,
) -> Forest:
    """Train cfg.n_trees CART regressors on bootstrap resamples."""
    table = dataset if isinstance(dataset, FeatureTable) else table_from_examples(dataset)
    if table.y is None:
        raise ValueError("dataset has no targets")
    n = table.n
    if n < 2 * cfg.min_leaf:
        raise ValueError(
            f"need at least {2 * cfg.min_leaf} examples, got {n}"
        )
    cols = np.array([table.catalog.index(name) for name in cat.names], dtype=np.int64)
    X = np.ascontiguousarray(table.X[:, cols])
    k = X.shape[1]
    mtry = cfg.mtry if cfg.mtry is not None else max(1, k // 3)
    if mtry > k:
        raise ValueError(f"mtry={mtry} exceeds {k} features")
    z = np.log1p(table.y.astype(np.float64)) if cfg.log_target else table.y.astype(np.float64)

    trees = []
    for t in range(cfg.n_trees):
        rng = np.random.default_rng([abs(int(cfg.seed)), _TREE_STREAM, t])
        rows = rng.integers(0, n, size=n) if cfg.bootstrap else np.arange(n)
        trees.append(_grow_tree(X, z, rows, rng, cfg, mtry))
    return Forest(cfg, tuple(cat.names), tuple(trees))


def predict_forest(forest: Forest, features: FeatureVector) -> float:
    """Prediction for a single editor: mean leaf value, back-transformed."""
    x = np.array(
        [features.values[features.catalog.index(n)] for n in forest.feature_names]
    )
    return float(predict_forest_matrix(forest, x[None, :])[0])


def predict_forest_table(forest: Forest, table: FeatureTable) -> np.ndarray:
    cols = np.array(
        [table.catalog.index(name) for name in forest.feature_names], dtype=np.int64
    )
    return predict_forest_matrix(forest, np.ascontiguousarray(table.X[:, cols]))


def predict_forest_matrix(forest: Forest, X: np.ndarray) -> np.ndarray:
    """Predictions for rows whose columns already match the forest order."""
    acc = np.zeros(X.shape[0], dtype=np.float64)
    for tree in forest.trees:
        acc += tree.apply(X)
    acc /= len(forest.trees)
    if forest.config.log_target:
        acc = np.expm1(acc)
    return np.maximum(acc, 0.0)


class _TreeBuilder:
    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def add(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1


def _grow_tree(
    X: np.ndarray,
    z: np.ndarray,
    rows: np.ndarray,
    rng: np.random.Generator,
    cfg: ForestConfig,
    mtry: int,
) -> RegressionTree:
    columns = [np.ascontiguousarray(X[:, f]) for f in range(X.shape[1])]
    k = X.shape[1]
    b = _TreeBuilder()
    positions = np.arange(X.shape[0] + 1)

    def build(idx: np.ndarray, depth: int) -> int:
        node = b.add()
        zr = z[idx]
        n = idx.size
        mean = float(np.mean(zr))
        sse = float(np.sum((zr - mean) ** 2))
        if n < 2 * cfg.min_leaf or depth >= cfg.max_depth or sse <= 1e-12:
            b.value[node] = mean
            return node
        feats = np.sort(rng.permutation(k)[:mtry])
        split = _best_split(columns, zr, idx, feats, cfg.min_leaf, positions)
        if split is None:
            b.value[node] = mean
            return node
        f, thr = split
        go_left = columns[f][idx] <= thr
        left = build(idx[go_left], depth + 1)
        right = build(idx[~go_left], depth + 1)
        b.feature[node] = int(f)
        b.threshold[node] = float(thr)
        b.left[node] = left
        b.right[node] = right
        b.value[node] = float("nan")
        return node

    build(rows, 0)
    return RegressionTree(
        np.array(b.feature, dtype=np.int64),
        np.array(b.threshold, dtype=np.float64),
        np.array(b.left, dtype=np.int64),
        np.array(b.right, dtype=np.int64),
        np.array(b.value, dtype=np.float64),
    )


def _best_split(
    columns: list[np.ndarray],
    zr: np.ndarray,
    idx: np.ndarray,
    feats: np.ndarray,
    min_leaf: int,
    positions: np.ndarray,
) -> tuple[int, float] | None:
    """Lowest-SSE midpoint split across the sampled features, or None.

    Since sum(z^2) over the node is fixed, minimizing child SSE equals
    maximizing cum^2/n_left + (total-cum)^2/n_right at the boundary.
    """
    n = idx.size
    i0 = positions[min_leaf - 1 : n - min_leaf]
    best_gain = -np.inf
    best: tuple[int, float] | None = None
    for f in feats:
        x = columns[f][idx]
        order = np.argsort(x)
        xs = x[order]
        valid = xs[i0] < xs[i0 + 1]
        if not valid.any():
            continue
        i = i0[valid]
        cum = np.cumsum(zr[order])
        total = cum[-1]
        n_left = (i + 1).astype(np.float64)
        ci = cum[i]
        gain = ci * ci / n_left + (total - ci) ** 2 / (n - n_left)
        j = int(np.argmax(gain))
        if gain[j] > best_gain:
            best_gain = float(gain[j])
            pos = int(i[j])
            best = (int(f), float((xs[pos] + xs[pos + 1]) / 2.0))
    return best
