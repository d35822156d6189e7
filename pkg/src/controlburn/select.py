"""End-to-end ControlBurn: grow once, bisect lambda per sparsity, refit.

Also holds the random-forest MDI baseline and the fit counters used to
compare ControlBurn's single growth phase against recursive elimination.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
from sklearn.ensemble import RandomForestClassifier, RandomForestRegressor

from .dataset import CLASSIFICATION, Dataset, as_generator
from .grow import Forest, grow_forest
from .prune import CostSpec, PruneProblem, Solution, build_problem, sketch_problem, solve
from .tree import mdi_importances

logger = logging.getLogger(__name__)

K_MAX = 10
SOLVE_BUDGET = 200
LAMBDA_FLOOR = 1e-12
# a bisection step this small relative to lambda means the target was jumped
STEP_RTOL = 1e-9
REFIT_TREES = 100


class FitLog(Counter):
    """Counts model-training events by kind (``"grow"``, ``"rfe"``, ``"refit"``)."""


def _seed_from(rng) -> int:
    return int(as_generator(rng).integers(0, 2**31 - 1))


def make_refit_model(task: str, random_state: int | None = None,
                     n_estimators: int = REFIT_TREES, n_jobs: int | None = None):
    """Random forest used for refits and the MDI baseline.

    Full-depth bagged trees with ``sqrt(p)`` candidate features per split for
    classification and ``p/3`` for regression.
    """
    if task == CLASSIFICATION:
        return RandomForestClassifier(n_estimators=n_estimators, max_features="sqrt",
                                      random_state=random_state, n_jobs=n_jobs)
    return RandomForestRegressor(n_estimators=n_estimators, max_features=1.0 / 3.0,
                                 random_state=random_state, n_jobs=n_jobs)


def refit(data: Dataset, features, random_state: int | None = None,
          fit_log: FitLog | None = None, **kwargs):
    """Fit the refit forest on the given feature columns only."""
    features = list(features)
    if not features:
        raise ValueError("cannot refit on an empty feature set")
    model = make_refit_model(data.task, random_state, **kwargs)
    model.fit(data.features[:, features], data.labels)
    if fit_log is not None:
        fit_log["refit"] += 1
    return model


@dataclass(frozen=True)
class PathPoint:
    lam: float
    k: int
    selected: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class BisectionResult:
    """Solutions realizing each reached sparsity, plus every probe made."""

    hits: dict[int, Solution]
    path: tuple[PathPoint, ...]
    unreachable: tuple[int, ...]
    solves: int
    exhausted: bool

    def nearest(self, k: int) -> list[int]:
        """Achieved sparsities closest to ``k`` (for reporting misses)."""
        seen = sorted({pt.k for pt in self.path})
        if not seen:
            return []
        best = min(abs(s - k) for s in seen)
        return [s for s in seen if abs(s - k) == best]


def bisect_lambda(problem: PruneProblem, targets: Iterable[int] | None = None,
                  k_max: int = K_MAX, budget: int = SOLVE_BUDGET,
                  lambda_floor: float = LAMBDA_FLOOR, **solve_kwargs) -> BisectionResult:
    """Find lambdas whose solutions select exactly ``k`` features.

    Starting from a lambda with nothing selected (doubling from 1), the
    current target ``k'`` is approached by moving lambda down by the step
    when too few features are selected and up by it when too many, halving
    the step after every move. On a hit the target advances and the step
    resets to half of lambda. A target is declared unreachable when the step
    underflows. Every probe is recorded.

    Targets beyond the number of features used by any tree are dropped.
    """
    n_usable = int((problem.G.sum(axis=1) > 0).sum())
    k_cap = min(k_max, n_usable)
    if targets is None:
        targets = range(1, k_cap + 1)
    targets = sorted({int(k) for k in targets if 1 <= int(k) <= k_cap})

    path: list[PathPoint] = []
    hits: dict[int, Solution] = {}
    unreachable: list[int] = []
    solves = 0
    w = None

    def probe(lam):
        nonlocal solves, w
        sol = solve(problem.with_lambda(lam), w0=w, **solve_kwargs)
        solves += 1
        w = sol.w
        path.append(PathPoint(lam, sol.k, sol.selected))
        if sol.k in targets and sol.k not in hits:
            hits[sol.k] = sol
        return sol

    lam = 1.0
    sol = probe(lam)
    while sol.k > 0 and solves < budget:
        lam *= 2.0
        w = None
        sol = probe(lam)
    k_now = sol.k

    step = lam / 2.0
    for target in targets:
        if target in hits:
            continue
        while solves < budget:
            if k_now < target:
                lam -= step
            else:
                lam += step
            step /= 2.0
            sol = probe(lam)
            k_now = sol.k
            if target in hits:
                break
            if step < max(lambda_floor, STEP_RTOL * lam):
                unreachable.append(target)
                break
        else:
            break
        step = lam / 2.0
    exhausted = solves >= budget and not all(t in hits or t in unreachable for t in targets)
    if exhausted:
        logger.warning("bisection budget of %d solves exhausted", budget)
        unreachable.extend(t for t in targets if t not in hits and t not in unreachable)
    return BisectionResult(dict(sorted(hits.items())), tuple(path),
                           tuple(sorted(set(unreachable))), solves, exhausted)


@dataclass(eq=False)
class KRecord:
    k: int
    lam: float
    selected: tuple[int, ...]
    names: tuple[str, ...]
    model: object = field(default=None, repr=False)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"k": self.k, "lambda": self.lam, "selected": list(self.selected),
                "features": list(self.names), **self.diagnostics}


@dataclass(eq=False)
class SelectionResult:
    """Per-sparsity selections from one grown forest."""

    records: dict[int, KRecord]
    k_max: int
    unreachable: tuple[int, ...] = ()
    forest: Forest | None = field(default=None, repr=False)
    problem: PruneProblem | None = field(default=None, repr=False)
    path: tuple[PathPoint, ...] = field(default=(), repr=False)
    nearest: dict[int, list[int]] = field(default_factory=dict)

    def __getitem__(self, k: int) -> KRecord:
        return self.records[k]

    def __contains__(self, k: int) -> bool:
        return k in self.records

    @property
    def achieved(self) -> list[int]:
        return sorted(self.records)

    def to_dict(self) -> dict:
        return {
            "k_max": self.k_max,
            "records": [self.records[k].to_dict() for k in self.achieved],
            "unreachable": [{"k": k, "nearest": self.nearest.get(k, [])}
                            for k in self.unreachable],
            "path": [{"lambda": pt.lam, "k": pt.k} for pt in self.path],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _record(data: Dataset, sol: Solution, problem: PruneProblem) -> KRecord:
    return KRecord(
        k=sol.k, lam=sol.lam, selected=sol.selected,
        names=tuple(data.names[j] for j in sol.selected),
        diagnostics={"kkt_residual": sol.kkt_residual, "iterations": sol.iterations,
                     "certified": sol.certified, "objective": sol.objective,
                     "active_trees": int(np.count_nonzero(sol.w)),
                     "train_loss": problem.with_lambda(0.0).objective(sol.w)},
    )


def controlburn(data: Dataset, k=None, *, k_max: int = K_MAX, lam: float | None = None,
                grower: str = "bagboost", grower_params: dict | None = None,
                costs: CostSpec | None = None, refit_models: bool = True,
                rng=None, fit_log: FitLog | None = None, n_jobs: int | None = None,
                forest: Forest | None = None, budget: int = SOLVE_BUDGET,
                sketch: int | None = None) -> SelectionResult:
    """Grow a forest once, prune it to each requested sparsity and refit.

    Parameters
    ----------
    k : int, iterable of int or None
        Requested sparsities; ``None`` walks the whole path ``1..k_max``.
        Ignored when ``lam`` is given.
    lam : float, optional
        Solve once at this lambda instead of bisecting.
    grower : {"bagboost", "bag"}
    grower_params : dict
        Extra keyword arguments for the grower (``max_depth``, ``window``,
        ``epsilon``, ``sparse_cost``, ``sparse_scope``, ...).
    forest : Forest, optional
        Reuse an already grown forest instead of growing one.
    sketch : int, optional
        Solve on a Gaussian sketch with this many rows (squared loss only).
    """
    gen = as_generator(rng)
    grow_seed, refit_seed, sketch_seed = (int(s) for s in gen.integers(0, 2**31 - 1, size=3))
    if forest is None:
        forest = grow_forest(data, grower, rng=grow_seed, **(grower_params or {}))
        if fit_log is not None:
            fit_log["grow"] += 1
    if len(forest) == 0:
        raise ValueError("the grower produced no trees; nothing to select from")
    problem = build_problem(forest, data, costs)
    if sketch is not None:
        problem = sketch_problem(problem, int(sketch), sketch_seed)

    if lam is not None:
        sol = solve(problem.with_lambda(lam))
        hits = {sol.k: sol} if sol.k else {}
        unreachable, path, nearest = (), (PathPoint(lam, sol.k, sol.selected),), {}
    else:
        if k is None:
            targets = list(range(1, min(data.p, k_max) + 1))
        elif isinstance(k, (int, np.integer)):
            targets = [int(k)]
        else:
            targets = sorted({int(v) for v in k})
        for t in targets:
            if not 1 <= t <= min(data.p, k_max):
                raise ValueError(f"k={t} outside [1, min(p, k_max)] = [1, {min(data.p, k_max)}]")
        res = bisect_lambda(problem, targets, k_max=k_max, budget=budget)
        hits = {t: res.hits[t] for t in targets if t in res.hits}
        unreachable = tuple(t for t in targets if t not in hits)
        path = res.path
        nearest = {t: res.nearest(t) for t in unreachable}
        if unreachable:
            logger.warning("sparsities %s not realized by the selection path", unreachable)

    records = {}
    for kk, sol in sorted(hits.items()):
        rec = _record(data, sol, problem)
        if refit_models:
            rec.model = refit(data, rec.selected, refit_seed, fit_log, n_jobs=n_jobs)
        records[kk] = rec
    return SelectionResult(records, k_max, unreachable, forest, problem, path, nearest)


def rank_by_mdi(importances) -> np.ndarray:
    """Feature indices by decreasing importance, ties by index."""
    imp = np.asarray(importances, dtype=float)
    return np.lexsort((np.arange(imp.size), -imp))


def baseline_mdi_select(data: Dataset, k: int, rng=None, model=None,
                        fit_log: FitLog | None = None, n_jobs: int | None = None):
    """Top-``k`` features by MDI of a random forest fit on all features."""
    if not 1 <= k <= data.p:
        raise ValueError(f"k must lie in [1, {data.p}]")
    if model is None:
        model = refit(data, range(data.p), _seed_from(rng), fit_log, n_jobs=n_jobs)
    order = rank_by_mdi(mdi_importances(model))
    return tuple(sorted(int(j) for j in order[:k]))


def fit_count_comparison(p: int, k: int) -> tuple[int, int]:
    """Ensemble trainings needed to pick ``k`` of ``p`` features:
    ControlBurn grows once, recursive elimination retrains ``p - k`` times."""
    if not 0 <= k <= p:
        raise ValueError("need 0 <= k <= p")
    return 1, p - k


def rfe_select(data: Dataset, k: int, rng=None, fit_log: FitLog | None = None,
               fit: Callable | None = None, n_estimators: int = 25):
    """Recursive elimination: drop the least important feature and retrain
    until ``k`` remain. Only here to count trainings against ControlBurn."""
    if not 1 <= k <= data.p:
        raise ValueError(f"k must lie in [1, {data.p}]")
    seed = _seed_from(rng)
    if fit is None:
        def fit(d, cols):
            return refit(d, cols, seed, n_estimators=n_estimators)
    remaining = list(range(data.p))
    while len(remaining) > k:
        model = fit(data, remaining)
        if fit_log is not None:
            fit_log["rfe"] += 1
        imp = mdi_importances(model)
        worst = rank_by_mdi(imp)[-1]
        remaining.pop(int(worst))
    return tuple(remaining)


def count_fits(data: Dataset, k: int, rng=None, **controlburn_kwargs) -> tuple[int, int]:
    """Run ControlBurn and recursive elimination with instrumentation and
    return the observed ``(growth phases, elimination trainings)``."""
    gen = as_generator(rng)
    cb_log, rfe_log = FitLog(), FitLog()
    controlburn(data, k, rng=gen, fit_log=cb_log, refit_models=False,
                **controlburn_kwargs)
    rfe_select(data, k, rng=gen, fit_log=rfe_log)
    return cb_log["grow"], rfe_log["rfe"]
