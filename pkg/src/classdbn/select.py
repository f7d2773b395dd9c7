"""Random-forest Gini importance for choosing blood-analysis features.

Vitals and static descriptors are always kept; only blood features compete
for the ``k_blood`` slots.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cohort import FeatureSchema
from .errors import DataError


def gini_impurity(counts) -> float:
    """``1 - p0^2 - p1^2`` for a pair of class counts."""
    n0, n1 = counts
    if n0 < 0 or n1 < 0:
        raise DataError("class counts must be nonnegative")
    total = n0 + n1
    if total == 0:
        raise DataError("gini impurity of an empty node is undefined")
    p0, p1 = n0 / total, n1 / total
    return 1.0 - p0 * p0 - p1 * p1


def _gini_arrays(pos: np.ndarray, n: np.ndarray) -> np.ndarray:
    p = pos / n
    return 2.0 * p * (1.0 - p)


@dataclass
class DecisionTree:
    """Flat binary tree; rows with ``x[feature] < threshold`` go left.

    ``importance[j]`` sums the impurity decreases of splits on feature ``j``,
    each weighted by the fraction of training rows reaching the node.
    """

    n_features: int
    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)
    importance: np.ndarray | None = None

    def _new_node(self, prob: float) -> int:
        self.feature.append(-1)
        self.threshold.append(math.nan)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(prob)
        return len(self.value) - 1

    @property
    def n_nodes(self) -> int:
        return len(self.value)

    @property
    def depth(self) -> int:
        def d(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(d(self.left[i]), d(self.right[i]))

        return d(0)

    def predict_proba(self, X) -> np.ndarray:
        x = np.atleast_2d(np.asarray(X, dtype=float))
        node = np.zeros(x.shape[0], dtype=int)
        feature = np.asarray(self.feature)
        threshold = np.asarray(self.threshold)
        left, right = np.asarray(self.left), np.asarray(self.right)
        active = feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            f = feature[node[rows]]
            go_left = x[rows, f] < threshold[node[rows]]
            node[rows] = np.where(go_left, left[node[rows]], right[node[rows]])
            active = feature[node] >= 0
        return np.asarray(self.value)[node]

    def predict(self, X) -> np.ndarray:
        return self.predict_proba(X) > 0.5


def _best_split(x: np.ndarray, y: np.ndarray, features) -> tuple[int, float, float] | None:
    """Best (feature, threshold, weighted child impurity) over ``features``."""
    n = y.size
    best = None
    for f in features:
        order = np.argsort(x[:, f], kind="stable")
        xs = x[order, f]
        change = np.flatnonzero(xs[1:] != xs[:-1])
        if change.size == 0:
            continue
        cum = np.cumsum(y[order])
        n_left = change + 1
        pos_left = cum[change]
        pos_right = cum[-1] - pos_left
        n_right = n - n_left
        child = (n_left * _gini_arrays(pos_left, n_left) + n_right * _gini_arrays(pos_right, n_right)) / n
        k = int(np.argmin(child))
        if best is None or child[k] < best[2]:
            lo, hi = xs[change[k]], xs[change[k] + 1]
            thr = lo + (hi - lo) / 2.0
            if not lo < thr <= hi:
                thr = hi
            best = (int(f), float(thr), float(child[k]))
    return best


def fit_tree(X, y, max_depth: int | None, mtry: int, rng: np.random.Generator) -> DecisionTree:
    """CART classification tree with Gini splits on ``mtry`` sampled features per node.

    A node becomes a leaf when it is pure, at ``max_depth``, holds fewer than
    two rows, or none of its sampled features varies.
    """
    x = np.asarray(X, dtype=float)
    labels = np.asarray(y, dtype=bool).astype(float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DataError("cannot fit a tree on an empty dataset")
    if labels.shape[0] != x.shape[0]:
        raise DataError("X and y are not aligned")
    n_rows, n_feat = x.shape
    if not 1 <= mtry <= n_feat:
        raise DataError(f"mtry must lie in [1, {n_feat}]")
    tree = DecisionTree(n_feat)
    tree.importance = np.zeros(n_feat)
    stack = [(np.arange(n_rows), 0, tree._new_node(float(labels.mean())))]
    while stack:
        rows, depth, node = stack.pop()
        yn = labels[rows]
        n = rows.size
        pos = yn.sum()
        if n < 2 or pos == 0 or pos == n or (max_depth is not None and depth >= max_depth):
            continue
        feats = np.sort(rng.choice(n_feat, mtry, replace=False))
        split = _best_split(x[rows], yn, feats)
        if split is None:
            continue
        f, thr, child_impurity = split
        gain = gini_impurity((n - pos, pos)) - child_impurity
        tree.importance[f] += (n / n_rows) * max(gain, 0.0)
        mask = x[rows, f] < thr
        lrows, rrows = rows[mask], rows[~mask]
        tree.feature[node] = f
        tree.threshold[node] = thr
        li = tree._new_node(float(labels[lrows].mean()))
        ri = tree._new_node(float(labels[rrows].mean()))
        tree.left[node], tree.right[node] = li, ri
        stack.append((rrows, depth + 1, ri))
        stack.append((lrows, depth + 1, li))
    return tree


@dataclass
class ImportanceReport:
    scores: dict[str, float]
    n_trees: int
    seed: int

    def ranked(self) -> list[tuple[str, float]]:
        return sorted(self.scores.items(), key=lambda kv: (-kv[1], kv[0]))

    def table(self) -> str:
        width = max(len(k) for k in self.scores) if self.scores else 4
        lines = [f"{'rank':>4}  {'feature':<{width}}  importance"]
        for r, (name, s) in enumerate(self.ranked(), 1):
            lines.append(f"{r:>4}  {name:<{width}}  {s:.6f}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"scores": self.scores, "n_trees": self.n_trees, "seed": self.seed}

    @classmethod
    def from_dict(cls, d) -> "ImportanceReport":
        return cls({k: float(v) for k, v in d["scores"].items()}, int(d["n_trees"]), int(d["seed"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def default_mtry(n_features: int) -> int:
    return max(1, math.ceil(math.sqrt(n_features)))


def tree_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


def canonical_order(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row permutation that sorts by label then every feature column."""
    keys = [X[:, j] for j in range(X.shape[1] - 1, -1, -1)] + [y]
    return np.lexsort(keys)


def rf_importance(
    X,
    y,
    n_trees: int = 100,
    max_depth: int | None = 8,
    mtry: int | None = None,
    seed: int = 0,
    feature_names=None,
    n_jobs: int = 1,
) -> ImportanceReport:
    """Mean decrease in Gini impurity averaged over bootstrap trees.

    Rows are put in a canonical order first, so the bootstrap draws (by row
    index, from a per-tree seeded generator) do not depend on input order.
    """
    if n_trees < 1:
        raise DataError("n_trees must be >= 1")
    x = np.asarray(X, dtype=float)
    labels = np.asarray(y, dtype=bool)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DataError("cannot fit a forest on an empty dataset")
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(x.shape[1])]
    if len(names) != x.shape[1]:
        raise DataError("feature_names length does not match X")
    mtry = default_mtry(x.shape[1]) if mtry is None else mtry
    order = canonical_order(x, labels)
    x, labels = x[order], labels[order]
    n = x.shape[0]

    def grow(i: int) -> np.ndarray:
        rng = tree_rng(seed, i)
        boot = rng.integers(0, n, n)
        return fit_tree(x[boot], labels[boot], max_depth, mtry, rng).importance

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(grow, range(n_trees)))
    else:
        parts = [grow(i) for i in range(n_trees)]
    mean = np.sum(parts, axis=0) / n_trees
    return ImportanceReport({name: float(v) for name, v in zip(names, mean)}, n_trees, seed)


def select_features(report: ImportanceReport, schema: FeatureSchema, k_blood: int) -> FeatureSchema:
    """Keep every vital and static feature plus the ``k_blood`` best blood features."""
    blood = [f.name for f in schema.features if f.kind == "blood"]
    if not 0 <= k_blood <= len(blood):
        raise DataError(f"k_blood must lie in [0, {len(blood)}]")
    missing = [b for b in blood if b not in report.scores]
    if missing:
        raise DataError(f"importance report lacks scores for {missing}")
    ranked = sorted(blood, key=lambda b: (-report.scores[b], blood.index(b)))
    chosen = set(ranked[:k_blood])
    return schema.subset(f.name for f in schema.features if f.kind != "blood" or f.name in chosen)
