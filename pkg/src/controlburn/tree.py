"""Depth-limited CART trees with an optional new-feature split cost.

Trees are stored as flat node arrays (``feature == -1`` marks a leaf), are
immutable after fitting and serialize to plain JSON-compatible dicts.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, as_generator

GINI = "gini"
SQUARED_ERROR = "squared_error"
CRITERIA = (GINI, SQUARED_ERROR)

# splits must beat the parent impurity by more than this
_MIN_DECREASE = 1e-12
_TIE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class TreeModel:
    """A fitted binary tree.

    Node ``k`` routes a row left iff ``x[feature[k]] <= threshold[k]``.
    Leaves hold ``value[k]``: class-1 frequency for gini fits, the mean
    target otherwise.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    impurity: np.ndarray
    node_depth: np.ndarray
    impurity_decreases: np.ndarray
    n_features: int
    criterion: str
    max_depth: int | None

    def __post_init__(self):
        for name in ("feature", "threshold", "left", "right", "value",
                     "n_samples", "impurity", "node_depth", "impurity_decreases"):
            a = np.array(getattr(self, name), copy=True)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def depth(self) -> int:
        internal = self.feature >= 0
        return int(self.node_depth[internal].max()) + 1 if internal.any() else 0

    @property
    def used(self) -> np.ndarray:
        """Binary indicator of the features this tree splits on."""
        g = np.zeros(self.n_features, dtype=np.int8)
        g[self.feature[self.feature >= 0]] = 1
        return g

    @property
    def used_features(self) -> tuple[int, ...]:
        return tuple(int(j) for j in np.flatnonzero(self.used))

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(
                f"expected {self.n_features} feature columns, got shape {X.shape}")
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.arange(X.shape[0])
        while active.size:
            f = self.feature[node[active]]
            inner = f >= 0
            active, f = active[inner], f[inner]
            if not active.size:
                break
            here = node[active]
            go_left = X[active, f] <= self.threshold[here]
            node[active] = np.where(go_left, self.left[here], self.right[here])
        return node

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "criterion": self.criterion,
            "max_depth": self.max_depth,
            "n_features": self.n_features,
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_samples": self.n_samples.tolist(),
            "impurity": self.impurity.tolist(),
            "node_depth": self.node_depth.tolist(),
            "impurity_decreases": self.impurity_decreases.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeModel":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=float),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=float),
            n_samples=np.asarray(d["n_samples"], dtype=np.int64),
            impurity=np.asarray(d["impurity"], dtype=float),
            node_depth=np.asarray(d["node_depth"], dtype=np.int64),
            impurity_decreases=np.asarray(d["impurity_decreases"], dtype=float),
            n_features=int(d["n_features"]),
            criterion=d["criterion"],
            max_depth=d["max_depth"],
        )


def node_impurity(y: np.ndarray, criterion: str) -> float:
    """Gini (binary) or variance of the targets in one node."""
    if y.size == 0:
        return 0.0
    if criterion == GINI:
        q = y.mean()
        return 2.0 * q * (1.0 - q)
    return float(np.mean((y - y.mean()) ** 2))


def _resolve_max_features(max_features, p: int) -> int:
    if max_features is None:
        return p
    if max_features == "sqrt":
        return max(1, int(np.sqrt(p)))
    if max_features == "third":
        return max(1, p // 3)
    if isinstance(max_features, float):
        return max(1, int(max_features * p))
    return max(1, min(p, int(max_features)))


def best_split(X, y, criterion, feature_cost=None, features=None):
    """Best penalized split of one node.

    Candidate thresholds are midpoints between consecutive distinct sorted
    values. Ties resolve to the lowest feature index, then the lowest
    threshold.

    Returns
    -------
    (feature, threshold, child_impurity, penalized) or None
        ``child_impurity`` is the size-weighted mean impurity of the two
        children; ``penalized`` adds the split's feature cost.
    """
    n, p = X.shape
    if n < 2:
        return None
    if features is None:
        features = np.arange(p)
    Xs = X[:, features]
    order = np.argsort(Xs, axis=0, kind="stable")
    xs = np.take_along_axis(Xs, order, axis=0)
    ys = y[order]
    n_left = np.arange(1, n, dtype=float)[:, None]
    n_right = n - n_left
    left_sum = np.cumsum(ys, axis=0)[:-1]
    total = ys.sum(axis=0)
    if criterion == GINI:
        q_left = left_sum / n_left
        q_right = (total - left_sum) / n_right
        child = (n_left * 2.0 * q_left * (1.0 - q_left)
                 + n_right * 2.0 * q_right * (1.0 - q_right)) / n
    else:
        left_sq = np.cumsum(ys * ys, axis=0)[:-1]
        total_sq = (ys * ys).sum(axis=0)
        sse_left = left_sq - left_sum ** 2 / n_left
        sse_right = (total_sq - left_sq) - (total - left_sum) ** 2 / n_right
        child = np.maximum(sse_left + sse_right, 0.0) / n
    valid = xs[1:] > xs[:-1]
    if not valid.any():
        return None
    penalized = child.copy()
    if feature_cost is not None:
        penalized += feature_cost[features][None, :]
    penalized[~valid] = np.inf
    # candidates within rounding of the best count as ties; feature-major
    # order then prefers the lowest feature, then the lowest threshold
    best = penalized.min()
    ties = penalized <= best + _TIE_TOL * max(1.0, abs(best))
    flat = int(np.argmax(ties.T))
    fi, pos = divmod(flat, n - 1)
    lo, hi = xs[pos, fi], xs[pos + 1, fi]
    thr = lo + (hi - lo) / 2.0
    if thr >= hi:
        thr = lo
    return int(features[fi]), float(thr), float(child[pos, fi]), float(penalized[pos, fi])


def fit_tree(X, y=None, max_depth: int | None = None, criterion: str = SQUARED_ERROR,
             sparse_cost: float = 0.0, max_features=None, rng=None,
             used=None) -> TreeModel:
    """Grow a CART tree greedily, breadth first.

    Parameters
    ----------
    X : array-like of shape (m, p) or Dataset
        When a :class:`Dataset` is passed, ``y`` may be omitted.
    y : array-like of shape (m,)
    max_depth : int or None
        ``None`` grows until leaves are pure or unsplittable.
    criterion : {"gini", "squared_error"}
        ``gini`` needs 0/1 targets.
    sparse_cost : float
        Added to the weighted child impurity when a split would introduce a
        feature this tree has not used yet.
    max_features : int, float, "sqrt", "third" or None
        Size of the random feature subset drawn at each node.
    rng : seed or Generator
        Only consumed when ``max_features`` restricts the candidates.
    used : bool array of shape (p,), optional
        Features treated as already used, so splitting on them is never
        charged ``sparse_cost``. Lets a grower extend the charge to features
        new to the whole forest.
    """
    if isinstance(X, Dataset):
        if y is None:
            y = X.labels
        X = X.features
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("cannot fit a tree on empty data")
    if y.shape[0] != X.shape[0]:
        raise ValueError("X and y have inconsistent lengths")
    if criterion not in CRITERIA:
        raise ValueError(f"unknown criterion {criterion!r}")
    if criterion == GINI and not np.all((y == 0) | (y == 1)):
        raise ValueError("gini criterion requires 0/1 targets")
    if max_depth is not None and max_depth < 0:
        raise ValueError("max_depth must be >= 0")
    if sparse_cost < 0:
        raise ValueError("sparse_cost must be >= 0")

    m, p = X.shape
    n_try = _resolve_max_features(max_features, p)
    gen = as_generator(rng) if n_try < p else None
    cost = None
    if sparse_cost > 0:
        cost = np.full(p, float(sparse_cost))
        if used is not None:
            cost[np.asarray(used, dtype=bool)] = 0.0

    feature, threshold, left, right = [], [], [], []
    value, n_samples, impurity, node_depth = [], [], [], []
    decreases = np.zeros(p)

    def new_node(rows, depth):
        yy = y[rows]
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(yy.mean()))
        n_samples.append(rows.size)
        impurity.append(node_impurity(yy, criterion))
        node_depth.append(depth)
        return len(feature) - 1

    queue = deque([(new_node(np.arange(m), 0), np.arange(m))])
    while queue:
        k, rows = queue.popleft()
        d = node_depth[k]
        parent = impurity[k]
        if parent <= 0.0 or rows.size < 2 or (max_depth is not None and d >= max_depth):
            continue
        feats = None
        if gen is not None:
            feats = np.sort(gen.choice(p, size=n_try, replace=False))
        found = best_split(X[rows], y[rows], criterion, cost, feats)
        if found is None:
            continue
        f, thr, child, penalized = found
        if parent - penalized <= _MIN_DECREASE:
            continue
        go_left = X[rows, f] <= thr
        feature[k], threshold[k] = f, thr
        decreases[f] += rows.size / m * (parent - child)
        if cost is not None:
            cost[f] = 0.0
        lk = new_node(rows[go_left], d + 1)
        rk = new_node(rows[~go_left], d + 1)
        left[k], right[k] = lk, rk
        queue.append((lk, rows[go_left]))
        queue.append((rk, rows[~go_left]))

    return TreeModel(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=float),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=float),
        n_samples=np.asarray(n_samples, dtype=np.int64),
        impurity=np.asarray(impurity, dtype=float),
        node_depth=np.asarray(node_depth, dtype=np.int64),
        impurity_decreases=decreases,
        n_features=p,
        criterion=criterion,
        max_depth=max_depth,
    )


def predict_tree(tree: TreeModel, X) -> np.ndarray:
    return tree.predict(X)


def _tree_decreases(t) -> np.ndarray:
    if isinstance(t, TreeModel):
        return t.impurity_decreases
    # fitted scikit-learn tree estimators
    return t.tree_.compute_feature_importances(normalize=False)


def mdi_importances(model, return_flag: bool = False):
    """Mean decrease impurity, averaged over trees and normalized to sum 1.

    ``model`` may be a :class:`TreeModel`, a sequence of trees, anything
    with a ``trees`` attribute, or a fitted scikit-learn forest. An ensemble
    with no splits gets all-zero importances; pass ``return_flag=True`` to
    also receive whether any split was found.
    """
    if isinstance(model, TreeModel):
        trees = [model]
    elif hasattr(model, "trees"):
        trees = list(model.trees)
    elif hasattr(model, "estimators_"):
        trees = list(model.estimators_)
    else:
        trees = list(model)
    if not trees:
        raise ValueError("need at least one tree")
    total = np.mean([_tree_decreases(t) for t in trees], axis=0)
    s = total.sum()
    has_splits = bool(s > 0)
    imp = total / s if has_splits else np.zeros_like(total)
    return (imp, has_splits) if return_flag else imp
