"""Diverse forest growers: incremental depth bagging and bag-boosting.

Both growers add trees of a fixed depth until the ensemble's training loss
settles inside a small tube, then move to deeper trees. Bag-boosting fits
each depth stage to the current pseudo-residuals and stops once a stage no
longer improves the out-of-bag error.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .dataset import CLASSIFICATION, REGRESSION, Dataset, as_generator, sample_bag
from .tree import GINI, SQUARED_ERROR, TreeModel, fit_tree

logger = logging.getLogger(__name__)

BAGGED = "bagged"
BAG_BOOSTED = "bag_boosted"

MAX_TREES = 500
PROB_CLIP = 1e-6


class ConvergenceMonitor:
    """Tube test on the tail of a loss sequence.

    Converged once at least ``window`` losses were seen and the last
    ``window`` of them span no more than ``epsilon`` (inclusive).
    """

    def __init__(self, window: int = 5, epsilon: float = 1e-3):
        if window < 1:
            raise ValueError("window must be a positive integer")
        if not epsilon > 0:
            raise ValueError("epsilon must be positive")
        self.window = int(window)
        self.epsilon = float(epsilon)
        self.history: list[float] = []

    def reset(self) -> None:
        self.history = []

    @property
    def converged(self) -> bool:
        if len(self.history) < self.window:
            return False
        tail = self.history[-self.window:]
        return max(tail) - min(tail) <= self.epsilon

    def update(self, loss: float) -> bool:
        loss = float(loss)
        if not np.isfinite(loss):
            raise ValueError(f"training loss must be finite, got {loss}")
        self.history.append(loss)
        return self.converged


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def logit(q):
    q = np.clip(q, PROB_CLIP, 1.0 - PROB_CLIP)
    return np.log(q) - np.log1p(-q)


def logistic_loss(y, z) -> float:
    """Mean ``log(1 + exp(-s z))`` with ``s = 2y - 1``."""
    s = 2.0 * np.asarray(y, dtype=float) - 1.0
    return float(np.mean(np.logaddexp(0.0, -s * np.asarray(z, dtype=float))))


def log_loss(y, q) -> float:
    """Cross-entropy of probabilities, clipped away from 0 and 1."""
    q = np.clip(q, PROB_CLIP, 1.0 - PROB_CLIP)
    return float(-np.mean(y * np.log(q) + (1.0 - y) * np.log1p(-q)))


def pseudo_residuals(y, z, task: str) -> np.ndarray:
    """Negative loss gradient at the current raw predictions ``z``.

    Classification uses the logistic loss on log-odds (``y - sigmoid(z)``);
    regression uses half squared error (``y - z``).
    """
    y = np.asarray(y, dtype=float)
    if task == CLASSIFICATION:
        return y - sigmoid(z)
    return y - np.asarray(z, dtype=float)


def pointwise_error(y, z, kind: str) -> np.ndarray:
    """Per-row error of raw predictions ``z``.

    ``kind`` is ``"logistic"`` (z are log-odds), ``"squared"`` or ``"absolute"``.
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    if kind == "logistic":
        return np.logaddexp(0.0, -(2.0 * y - 1.0) * z)
    if kind == "squared":
        return (y - z) ** 2
    if kind == "absolute":
        return np.abs(y - z)
    raise ValueError(f"unknown error kind {kind!r}")


class OOBImprovement(NamedTuple):
    delta: float
    usable: int
    skipped: int


def oob_improvement(y, base, stage_preds, oob_masks, kind: str = "squared",
                    learning_rate: float = 1.0) -> OOBImprovement:
    """Out-of-bag improvement contributed by a new stage of trees.

    Each row's stage prediction averages only the stage trees for which the
    row was out of bag; rows that were in every bag are skipped.

    Parameters
    ----------
    y : ndarray of shape (m,)
    base : ndarray of shape (m,)
        Raw predictions of the ensemble before the stage.
    stage_preds : ndarray of shape (n_trees, m)
    oob_masks : bool ndarray of shape (n_trees, m)
    kind : {"squared", "logistic", "absolute"}

    Returns
    -------
    OOBImprovement
        ``delta`` is the mean over usable rows of
        ``error(base) - error(base + learning_rate * stage)``.
    """
    stage_preds = np.atleast_2d(np.asarray(stage_preds, dtype=float))
    oob_masks = np.atleast_2d(np.asarray(oob_masks, dtype=bool))
    counts = oob_masks.sum(axis=0)
    usable = counts > 0
    n_use = int(usable.sum())
    if n_use == 0:
        raise ValueError("no row is out of bag for any tree in the stage")
    oob_mean = (stage_preds * oob_masks).sum(axis=0)[usable] / counts[usable]
    y_u = np.asarray(y, dtype=float)[usable]
    base_u = np.asarray(base, dtype=float)[usable]
    before = pointwise_error(y_u, base_u, kind)
    after = pointwise_error(y_u, base_u + learning_rate * oob_mean, kind)
    return OOBImprovement(float(np.mean(before - after)), n_use, int(usable.size - n_use))


@dataclass(frozen=True)
class TreeMeta:
    depth: int
    stage: int
    in_bag: np.ndarray = field(repr=False)

    def oob_mask(self, m: int) -> np.ndarray:
        mask = np.ones(m, dtype=bool)
        mask[self.in_bag] = False
        return mask


@dataclass(frozen=True, eq=False)
class Forest:
    """Ordered tree sequence plus what is needed to combine it.

    Raw predictions are ``offset + tree_columns(X).sum(axis=1)``: for a
    bag-boosted forest that is the log-odds (classification) or the response
    (regression); for a bagged forest it is the averaged leaf value.
    """

    trees: tuple[TreeModel, ...]
    meta: tuple[TreeMeta, ...]
    offset: float
    mode: str
    task: str
    n_features: int
    learning_rate: float = 1.0
    trace: tuple[dict, ...] = field(default=(), repr=False)

    def __post_init__(self):
        if len(self.trees) != len(self.meta):
            raise ValueError("one metadata record per tree is required")
        depths = [mt.depth for mt in self.meta]
        if any(b < a for a, b in zip(depths, depths[1:])):
            raise ValueError("depth stages must be nondecreasing")

    def __len__(self):
        return len(self.trees)

    @property
    def n_stages(self) -> int:
        return len({mt.stage for mt in self.meta})

    def stage_sizes(self) -> dict[int, int]:
        sizes: dict[int, int] = {}
        for mt in self.meta:
            sizes[mt.stage] = sizes.get(mt.stage, 0) + 1
        return sizes

    def column_scales(self) -> np.ndarray:
        """Multiplier applied to each tree's output in :meth:`tree_columns`."""
        if self.mode == BAG_BOOSTED:
            sizes = self.stage_sizes()
            return np.array([self.learning_rate / sizes[mt.stage] for mt in self.meta])
        return np.full(len(self.trees), 1.0 / max(len(self.trees), 1))

    def tree_columns(self, X) -> np.ndarray:
        """Matrix whose column ``i`` is tree ``i``'s share of the raw prediction."""
        X = np.asarray(X, dtype=float)
        if not self.trees:
            return np.zeros((X.shape[0], 0))
        P = np.column_stack([t.predict(X) for t in self.trees])
        if self.mode == BAGGED:
            P = P - self.offset
        return P * self.column_scales()

    def decision_function(self, X) -> np.ndarray:
        return self.offset + self.tree_columns(X).sum(axis=1)

    def predict_proba(self, X) -> np.ndarray:
        """Class-1 probability (classification forests only)."""
        if self.task != CLASSIFICATION:
            raise ValueError("predict_proba needs a classification forest")
        raw = self.decision_function(X)
        if self.mode == BAG_BOOSTED:
            return sigmoid(raw)
        return np.clip(raw, 0.0, 1.0)

    def predict(self, X) -> np.ndarray:
        if self.task == CLASSIFICATION:
            return (self.predict_proba(X) > 0.5).astype(float)
        return self.decision_function(X)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "task": self.task,
            "offset": self.offset,
            "learning_rate": self.learning_rate,
            "n_features": self.n_features,
            "trees": [
                {"depth": mt.depth, "stage": mt.stage,
                 "in_bag": mt.in_bag.tolist(), "tree": t.to_dict()}
                for t, mt in zip(self.trees, self.meta)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Forest":
        trees = tuple(TreeModel.from_dict(r["tree"]) for r in d["trees"])
        meta = tuple(TreeMeta(int(r["depth"]), int(r["stage"]),
                              np.asarray(r["in_bag"], dtype=np.int64))
                     for r in d["trees"])
        return cls(trees, meta, float(d["offset"]), d["mode"], d["task"],
                   int(d["n_features"]), float(d["learning_rate"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def trace_jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.trace)


def _scope_mask(scope: str, p: int):
    if scope == "tree":
        return None
    if scope == "forest":
        return np.zeros(p, dtype=bool)
    raise ValueError(f"sparse_scope must be 'tree' or 'forest', got {scope!r}")


def _train_loss(task, y, raw, mode) -> float:
    if task == REGRESSION:
        return float(np.mean((y - raw) ** 2))
    if mode == BAGGED:
        return log_loss(y, raw)
    return logistic_loss(y, raw)


def incremental_depth_bagging(data: Dataset, max_depth: int, window: int = 5,
                              epsilon: float = 1e-3, rng=None,
                              max_trees: int = MAX_TREES,
                              sparse_cost: float = 0.0,
                              sparse_scope: str = "tree") -> Forest:
    """Bag trees of depth 1, 2, ..., ``max_depth``.

    At each depth, trees are added until the training loss of the averaged
    forest converges (see :class:`ConvergenceMonitor`). ``sparse_cost`` and
    ``sparse_scope`` are passed to the tree learner as in
    :func:`incremental_depth_bag_boosting`.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    forest_used = _scope_mask(sparse_scope, data.p)
    rng = as_generator(rng)
    X, y, m = data.features, data.labels, data.m
    criterion = GINI if data.task == CLASSIFICATION else SQUARED_ERROR
    offset = float(y.mean())
    trees, meta, trace = [], [], []
    total = np.zeros(m)
    monitor = ConvergenceMonitor(window, epsilon)
    for d in range(1, max_depth + 1):
        monitor.reset()
        while True:
            if len(trees) >= max_trees:
                warnings.warn(f"tree cap of {max_trees} reached before convergence",
                              RuntimeWarning, stacklevel=2)
                break
            bag = sample_bag(m, rng)
            t = fit_tree(X[bag.in_bag], y[bag.in_bag], d, criterion, sparse_cost,
                         used=forest_used)
            if forest_used is not None:
                forest_used |= t.used.astype(bool)
            trees.append(t)
            meta.append(TreeMeta(d, d, bag.in_bag))
            total += t.predict(X)
            loss = _train_loss(data.task, y, total / len(trees), BAGGED)
            trace.append({"tree": len(trees) - 1, "depth": d, "stage": d,
                          "train_loss": loss})
            if monitor.update(loss):
                break
        if len(trees) >= max_trees:
            break
    return Forest(tuple(trees), tuple(meta), offset, BAGGED, data.task, data.p,
                  trace=tuple(trace))


def incremental_depth_bag_boosting(data: Dataset, window: int = 5,
                                   epsilon: float = 1e-3, rng=None,
                                   learning_rate: float = 1.0,
                                   oob_stopping: bool = True,
                                   max_stages: int | None = None,
                                   max_trees: int = MAX_TREES,
                                   oob_error: str | None = None,
                                   sparse_cost: float = 0.0,
                                   sparse_scope: str = "tree") -> Forest:
    """Gradient boosting whose stages are bagged ensembles of growing depth.

    Stage ``d`` bags depth-``d`` regression trees on the pseudo-residuals
    until the training loss of the boosted ensemble converges, then is
    folded into the forest. Growth stops when a stage's out-of-bag
    improvement is negative; that stage is discarded. The first stage is
    always kept.

    Parameters
    ----------
    oob_stopping : bool
        When False, every stage is kept until ``max_stages`` or the tree cap;
        the per-stage improvements are still recorded in the trace.
    oob_error : {"logistic", "squared", "absolute"} or None
        Error used for the improvement; defaults to logistic for
        classification and squared for regression.
    sparse_cost : float
        New-feature split cost for the tree learner (0 gives plain CART).
    sparse_scope : {"tree", "forest"}
        Whether "new" means unused within the current tree or unused by every
        tree grown so far.
    """
    forest_used = _scope_mask(sparse_scope, data.p)
    rng = as_generator(rng)
    X, y, m = data.features, data.labels, data.m
    task = data.task
    if oob_error is None:
        oob_error = "logistic" if task == CLASSIFICATION else "squared"
    if task == CLASSIFICATION:
        base_rate = float(y.mean())
        if base_rate in (0.0, 1.0):
            warnings.warn("all labels belong to one class; returning the offset only",
                          RuntimeWarning, stacklevel=2)
            return Forest((), (), float(logit(base_rate)), BAG_BOOSTED, task, data.p,
                          learning_rate)
        offset = float(logit(base_rate))
    else:
        offset = float(y.mean())

    trees, meta, trace = [], [], []
    F = np.full(m, offset)
    monitor = ConvergenceMonitor(window, epsilon)
    stage = 0
    capped = False
    while max_stages is None or stage < max_stages:
        stage += 1
        depth = stage
        e = pseudo_residuals(y, F, task)
        if np.max(np.abs(e)) <= 1e-12 * max(1.0, np.max(np.abs(y))):
            trace.append({"stage": stage, "event": "zero_residuals"})
            break
        monitor.reset()
        stage_used = None if forest_used is None else forest_used.copy()
        s_trees, s_bags, s_preds, s_oob = [], [], [], []
        stage_sum = np.zeros(m)
        while True:
            if len(trees) + len(s_trees) >= max_trees:
                capped = True
                break
            bag = sample_bag(m, rng)
            t = fit_tree(X[bag.in_bag], e[bag.in_bag], depth, SQUARED_ERROR,
                         sparse_cost, used=stage_used)
            if stage_used is not None:
                stage_used |= t.used.astype(bool)
            pred = t.predict(X)
            s_trees.append(t)
            s_bags.append(bag)
            s_preds.append(pred)
            s_oob.append(bag.oob_mask)
            stage_sum += pred
            loss = _train_loss(task, y, F + learning_rate * stage_sum / len(s_trees),
                               BAG_BOOSTED)
            trace.append({"tree": len(trees) + len(s_trees) - 1, "depth": depth,
                          "stage": stage, "train_loss": loss})
            if monitor.update(loss):
                break
        if not s_trees:
            break
        if all(t.n_nodes == 1 for t in s_trees):
            trace.append({"stage": stage, "depth": depth, "event": "no_splits"})
            break
        try:
            imp = oob_improvement(y, F, np.array(s_preds), np.array(s_oob),
                                  oob_error, learning_rate)
        except ValueError:
            imp = OOBImprovement(0.0, 0, m)
        if imp.skipped:
            logger.info("stage %d: %d rows never out of bag", stage, imp.skipped)
        accept = not oob_stopping or stage == 1 or imp.delta >= 0
        trace.append({"stage": stage, "depth": depth, "event": "stage_end",
                      "n_trees": len(s_trees), "delta": imp.delta,
                      "oob_rows": imp.usable, "accepted": accept})
        if not accept:
            break
        F = F + learning_rate * stage_sum / len(s_trees)
        forest_used = stage_used
        trees.extend(s_trees)
        meta.extend(TreeMeta(depth, stage, b.in_bag) for b in s_bags)
        if capped:
            break
    if capped:
        warnings.warn(f"tree cap of {max_trees} reached", RuntimeWarning, stacklevel=2)
    return Forest(tuple(trees), tuple(meta), offset, BAG_BOOSTED, task, data.p,
                  learning_rate, tuple(trace))


def grow_forest(data: Dataset, grower: str = "bagboost", max_depth: int = 5,
                window: int = 5, epsilon: float = 1e-3, rng=None, **kwargs) -> Forest:
    """Dispatch to one of the growers by name (``"bag"`` or ``"bagboost"``)."""
    if grower == "bag":
        return incremental_depth_bagging(data, max_depth, window, epsilon, rng, **kwargs)
    if grower == "bagboost":
        return incremental_depth_bag_boosting(data, window, epsilon, rng, **kwargs)
    raise ValueError(f"unknown grower {grower!r}")
