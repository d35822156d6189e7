"""Non-negative weighted-LASSO pruning of a tree ensemble.

Given tree prediction columns ``A`` (m x n), usage matrix ``G`` (p x n) and
per-tree penalties ``u``, solve::

    minimize    (1/m) L(y, offset + A w) + lam * sum_i u_i w_i
    subject to  w >= 0

A feature ``j`` is selected when ``(G w)_j > 0``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import CLASSIFICATION, Dataset, as_generator
from .grow import BAGGED, Forest, logit

SQUARED = "squared"
LOGISTIC = "logistic"
LOSSES = (SQUARED, LOGISTIC)

KKT_TOL = 1e-6
MAX_ITER = 10_000
# weights below this fraction of max(w) are snapped to zero
TRUNCATION = 1e-8


class NumericalError(ArithmeticError):
    """The solver met non-finite values."""


@dataclass(frozen=True)
class CostSpec:
    """How a tree's penalty weight is derived from the features it uses.

    ``unit``: number of features used. ``per_feature``: sum of the used
    features' costs. ``grouped``: sum of the costs of every group the tree
    touches, where ``groups`` partitions the feature indices.
    """

    mode: str = "unit"
    feature_costs: tuple[float, ...] | None = None
    groups: tuple[tuple[int, ...], ...] | None = None
    group_costs: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.mode not in ("unit", "per_feature", "grouped"):
            raise ValueError(f"unknown cost mode {self.mode!r}")
        if self.mode == "per_feature":
            if self.feature_costs is None:
                raise ValueError("per_feature costs need feature_costs")
            costs = tuple(float(c) for c in self.feature_costs)
            if any(not c > 0 for c in costs):
                raise ValueError("feature costs must be positive")
            object.__setattr__(self, "feature_costs", costs)
        if self.mode == "grouped":
            if self.groups is None or self.group_costs is None:
                raise ValueError("grouped costs need groups and group_costs")
            groups = tuple(tuple(int(j) for j in g) for g in self.groups)
            costs = tuple(float(c) for c in self.group_costs)
            if len(groups) != len(costs):
                raise ValueError("one cost per group is required")
            if any(not c > 0 for c in costs):
                raise ValueError("group costs must be positive")
            flat = [j for g in groups for j in g]
            if len(flat) != len(set(flat)):
                raise ValueError("groups must not overlap")
            object.__setattr__(self, "groups", groups)
            object.__setattr__(self, "group_costs", costs)

    def check(self, p: int) -> None:
        if self.mode == "per_feature" and len(self.feature_costs) != p:
            raise ValueError(f"{len(self.feature_costs)} feature costs for p={p}")
        if self.mode == "grouped":
            flat = sorted(j for g in self.groups for j in g)
            if flat != list(range(p)):
                raise ValueError(f"groups must partition features 0..{p - 1}")

    def penalties(self, G: np.ndarray) -> np.ndarray:
        """Per-tree weights ``u`` for usage matrix ``G`` (p x n)."""
        G = np.asarray(G, dtype=float)
        self.check(G.shape[0])
        if self.mode == "unit":
            return G.sum(axis=0)
        if self.mode == "per_feature":
            return np.asarray(self.feature_costs) @ G
        touched = np.array([G[list(g)].max(axis=0) for g in self.groups])
        return np.asarray(self.group_costs) @ touched

    def to_dict(self) -> dict:
        d = {"mode": self.mode}
        if self.mode == "per_feature":
            d["feature_costs"] = list(self.feature_costs)
        if self.mode == "grouped":
            d["groups"] = [list(g) for g in self.groups]
            d["group_costs"] = list(self.group_costs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CostSpec":
        return cls(d.get("mode", "unit"), d.get("feature_costs"), d.get("groups"),
                   d.get("group_costs"))

    @classmethod
    def load(cls, path) -> "CostSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class PruneProblem:
    A: np.ndarray
    G: np.ndarray
    u: np.ndarray
    y: np.ndarray
    loss: str = SQUARED
    offset: float = 0.0
    lam: float = 0.0

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        G = np.asarray(self.G, dtype=np.int8)
        u = np.asarray(self.u, dtype=float)
        y = np.asarray(self.y, dtype=float).ravel()
        if A.ndim != 2:
            raise ValueError("A must be a matrix")
        m, n = A.shape
        if G.ndim != 2 or G.shape[1] != n:
            raise ValueError(f"G must have {n} columns")
        if u.shape != (n,) or y.shape != (m,):
            raise ValueError("u needs one entry per column, y one per row")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.loss == LOGISTIC and not np.all((y == 0) | (y == 1)):
            raise ValueError("logistic loss needs 0/1 labels")
        if not self.lam >= 0:
            raise ValueError("lambda must be >= 0")
        if np.any(u < 0):
            raise ValueError("penalty weights must be nonnegative")
        if not np.all(np.isfinite(A)):
            raise NumericalError("A contains non-finite entries")
        for name, v in (("A", A), ("G", G), ("u", u), ("y", y)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    def with_lambda(self, lam: float) -> "PruneProblem":
        return replace(self, lam=float(lam))

    def margin(self, w) -> np.ndarray:
        return self.offset + self.A @ w

    def loss_value(self, w) -> float:
        """``(1/m) L(y, offset + A w)``."""
        z = self.margin(w)
        if self.loss == SQUARED:
            r = self.y - z
            return float(r @ r) / self.m
        s = 2.0 * self.y - 1.0
        return float(np.sum(np.logaddexp(0.0, -s * z))) / self.m

    def loss_gradient(self, w) -> np.ndarray:
        z = self.margin(w)
        if self.loss == SQUARED:
            return -2.0 / self.m * (self.A.T @ (self.y - z))
        s = 2.0 * self.y - 1.0
        # d/dz log(1 + exp(-s z)) = -s * sigmoid(-s z)
        return self.A.T @ (-s * 0.5 * (1.0 - np.tanh(0.5 * s * z))) / self.m

    def loss_hessian(self, w, cols=None) -> np.ndarray:
        A = self.A if cols is None else self.A[:, cols]
        if self.loss == SQUARED:
            return 2.0 / self.m * (A.T @ A)
        q = 0.5 * (1.0 + np.tanh(0.5 * self.margin(w)))
        return (A.T * (q * (1.0 - q))) @ A / self.m

    def objective(self, w) -> float:
        return self.loss_value(w) + self.lam * float(self.u @ w)

    def kkt_residual(self, w, grad=None) -> float:
        """Largest violation of the optimality conditions at ``w``."""
        w = np.asarray(w, dtype=float)
        if self.n == 0:
            return 0.0
        g = (self.loss_gradient(w) if grad is None else grad) + self.lam * self.u
        viol = np.where(w > 0, np.abs(g), np.maximum(0.0, -g))
        return float(viol.max())

    def lambda_max(self) -> float:
        """Smallest lambda at which ``w = 0`` satisfies the optimality conditions
        for every penalized tree."""
        g = self.loss_gradient(np.zeros(self.n))
        pen = self.u > 0
        if not pen.any():
            return 0.0
        return float(np.max(np.maximum(0.0, -g[pen]) / self.u[pen]))

    def to_dict(self) -> dict:
        return {"loss": self.loss, "lambda": self.lam, "offset": self.offset,
                "u": self.u.tolist(), "m": self.m, "n": self.n}


@dataclass(frozen=True, eq=False)
class Solution:
    w: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    selected: tuple[int, ...]
    certified: bool
    lam: float
    history: tuple[float, ...] = field(default=(), repr=False)

    @property
    def k(self) -> int:
        return len(self.selected)

    def to_dict(self, u=None) -> dict:
        d = {"w": self.w.tolist(), "lambda": self.lam,
             "selected": list(self.selected), "kkt_residual": self.kkt_residual,
             "iterations": self.iterations, "objective": self.objective,
             "certified": self.certified}
        if u is not None:
            d["u"] = np.asarray(u).tolist()
        return d


def selected_features(w, G) -> tuple[int, ...]:
    """Indices ``j`` with ``(G w)_j > 0``."""
    w = np.asarray(w, dtype=float)
    G = np.asarray(G, dtype=float)
    if w.size == 0:
        return ()
    return tuple(int(j) for j in np.flatnonzero(G @ w > 0))


def build_problem(forest: Forest, data: Dataset, costs: CostSpec | None = None,
                  loss: str | None = None, lam: float = 0.0) -> PruneProblem:
    """Pruning problem for ``forest`` on the rows of ``data``.

    Column ``i`` of ``A`` is tree ``i``'s contribution to the forest's raw
    prediction, so ``w = 1`` reproduces the grown forest. For a bagged
    classifier under logistic loss the intercept is the log-odds of the base
    rate and columns hold each tree's deviation from that rate.
    """
    if len(forest) == 0:
        raise ValueError("cannot prune an empty forest")
    if forest.n_features != data.p:
        raise ValueError(f"forest expects {forest.n_features} features, data has {data.p}")
    if loss is None:
        loss = LOGISTIC if data.task == CLASSIFICATION else SQUARED
    if (loss == LOGISTIC) != (data.task == CLASSIFICATION):
        raise ValueError(f"{loss} loss does not match a {data.task} task")
    costs = costs or CostSpec()
    G = np.column_stack([t.used for t in forest.trees])
    u = costs.penalties(G)
    A = forest.tree_columns(data.features)
    offset = forest.offset
    if forest.mode == BAGGED and loss == LOGISTIC:
        offset = float(logit(forest.offset))
    return PruneProblem(A, G, u, data.labels, loss, offset, lam)


def _lipschitz(problem: PruneProblem) -> float:
    if problem.n == 0:
        return 1.0
    s = np.linalg.norm(problem.A, 2) ** 2
    scale = 2.0 if problem.loss == SQUARED else 0.25
    return max(scale * s / problem.m, 1e-12)


def _newton_polish(problem: PruneProblem, w: np.ndarray, f_w: float):
    """Newton steps restricted to the current support, kept feasible by
    projection with Armijo backtracking. Returns the improved point."""
    lam_u = problem.lam * problem.u
    for _ in range(20):
        S = np.flatnonzero(w > 0)
        if S.size == 0:
            break
        g = problem.loss_gradient(w)[S] + lam_u[S]
        if np.max(np.abs(g)) <= 0.1 * KKT_TOL:
            break
        H = problem.loss_hessian(w, S)
        H[np.diag_indices_from(H)] += 1e-12 * max(1.0, float(np.trace(H)) / S.size)
        try:
            d = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            d = -np.linalg.lstsq(H, g, rcond=None)[0]
        slope = float(g @ d)
        if not slope < 0:
            break
        step, improved = 1.0, False
        while step > 1e-10:
            cand = w.copy()
            cand[S] = np.maximum(0.0, w[S] + step * d)
            f_c = problem.objective(cand)
            if f_c <= f_w + 1e-4 * step * slope:
                w, f_w, improved = cand, f_c, True
                break
            step *= 0.5
        if not improved:
            break
    return w, f_w


def solve(problem: PruneProblem, w0=None, tol: float = KKT_TOL,
          max_iter: int = MAX_ITER, polish: bool = True) -> Solution:
    """Monotone accelerated proximal gradient with backtracking.

    The prox of the penalty on the nonnegative orthant is
    ``max(0, v - step * lam * u)``. Every 25 iterations the iterate is
    refined by Newton steps on its support and the optimality conditions
    are checked; the run stops once their violation is at most ``tol``.
    Small weights are snapped to zero before features are read off.
    """
    n = problem.n
    lam_u = problem.lam * problem.u
    x = np.zeros(n) if w0 is None else np.maximum(0.0, np.asarray(w0, dtype=float))
    if n == 0:
        obj = problem.objective(x)
        return Solution(x, obj, 0.0, 0, (), True, problem.lam, (obj,))

    L = _lipschitz(problem)
    f_x = problem.loss_value(x)
    F_x = f_x + lam_u @ x
    history = [F_x]
    yk, t, prev = x.copy(), 1.0, x.copy()
    it = 0
    kkt = math.inf
    while it < max_iter:
        it += 1
        f_y = problem.loss_value(yk)
        g_y = problem.loss_gradient(yk)
        if not (np.isfinite(f_y) and np.all(np.isfinite(g_y))):
            raise NumericalError("non-finite loss or gradient during the solve")
        L *= 0.8
        while True:
            z = np.maximum(0.0, yk - (g_y + lam_u) / L)
            dz = z - yk
            f_z = problem.loss_value(z)
            if f_z <= f_y + g_y @ dz + 0.5 * L * (dz @ dz) + 1e-15 * abs(f_y):
                break
            L *= 2.0
        F_z = f_z + lam_u @ z
        prev = x
        if F_z <= F_x:
            x, F_x = z, F_z
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        yk = x + (t / t_next) * (z - x) + ((t - 1.0) / t_next) * (x - prev)
        t = t_next
        history.append(F_x)
        if it % 25 == 0 or it == max_iter:
            if polish:
                x_p, F_p = _newton_polish(problem, x, F_x)
                if F_p < F_x:
                    x, F_x = x_p, F_p
                    history[-1] = F_x
                    yk, t = x.copy(), 1.0
            kkt = problem.kkt_residual(x)
            if kkt <= tol:
                break
            if np.array_equal(x, prev) and np.array_equal(z, x):
                break

    w = x.copy()
    if w.max() > 0:
        w[w < TRUNCATION * w.max()] = 0.0
    obj = problem.objective(w)
    kkt = problem.kkt_residual(w)
    return Solution(w, obj, kkt, it, selected_features(w, problem.G), kkt <= tol,
                    problem.lam, tuple(history))


def sketch_problem(problem: PruneProblem, s: int, rng=None,
                   identity: bool = False) -> PruneProblem:
    """Replace ``(A, y)`` with ``(S A, S y)`` for Gaussian ``S`` (s x m).

    Entries of ``S`` are ``N(0, 1/s)`` so ``E||S x||^2 = ||x||^2``. The
    sketched rows are further multiplied by ``sqrt(s/m)``: the returned
    problem averages its loss over ``s`` rows, and this keeps that average an
    unbiased estimate of the full ``(1/m)``-normalized loss, so ``lambda``
    means the same thing on both. The offset is folded into the sketched
    response.
    """
    if problem.loss != SQUARED:
        raise ValueError("sketching is only defined for the squared loss")
    if not 1 <= s <= problem.m:
        raise ValueError(f"sketch size must lie in [1, {problem.m}]")
    r = problem.y - problem.offset
    if identity:
        if s != problem.m:
            raise ValueError("the identity sketch needs s == m")
        SA, Sy = problem.A, r
    else:
        S = as_generator(rng).normal(0.0, 1.0 / math.sqrt(s), size=(s, problem.m))
        S *= math.sqrt(s / problem.m)
        SA, Sy = S @ problem.A, S @ r
    return PruneProblem(SA, problem.G, problem.u, Sy, SQUARED, 0.0, problem.lam)


def sketch_solve(problem: PruneProblem, s: int, rng=None, identity: bool = False,
                 **kwargs) -> Solution:
    """Solve the sketched problem; certification refers to the sketched objective."""
    return solve(sketch_problem(problem, s, rng, identity), **kwargs)


def solve_path(problem: PruneProblem, lambdas: Sequence[float], **kwargs) -> list[Solution]:
    """Warm-started solves over a sequence of lambdas."""
    out, w = [], None
    for lam in lambdas:
        sol = solve(problem.with_lambda(lam), w0=w, **kwargs)
        out.append(sol)
        w = sol.w
    return out
