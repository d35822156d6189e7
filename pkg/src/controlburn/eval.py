"""Metrics and experiment drivers: ROC-AUC, cross-validated comparison
against the MDI baseline, and the uninformative-feature rank sweep."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .dataset import (CLASSIFICATION, Dataset, DataValidationError, as_generator,
                      duplicate_features, make_folds, make_signal_dataset)
from .select import (K_MAX, baseline_mdi_select, controlburn, make_refit_model,
                     rank_by_mdi, refit)
from .tree import mdi_importances

logger = logging.getLogger(__name__)

CONTROLBURN = "controlburn"
BASELINE = "mdi_baseline"
METHODS = (CONTROLBURN, BASELINE)
UNINFORMATIVE = "uninformative"


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney statistic.

    Tied scores across classes count one half.

    Examples
    --------
    >>> roc_auc([0.1, 0.9], [0, 1])
    1.0
    >>> roc_auc([0.3, 0.3], [0, 1])
    0.5
    """
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels, dtype=float).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC-AUC needs both classes present")
    ranks = rankdata(s)  # midranks for ties
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def positive_scores(model, X) -> np.ndarray:
    """Averaged leaf probability of class 1 from a fitted forest."""
    proba = model.predict_proba(X)
    classes = list(model.classes_)
    if 1.0 not in classes:
        return np.zeros(X.shape[0])
    return proba[:, classes.index(1.0)]


@dataclass(eq=False)
class ComparisonReport:
    """Per-fold test AUC of ControlBurn and the MDI baseline at each k.

    ``auc[method][k]`` holds one entry per fold, ``nan`` where ControlBurn
    could not realize ``k`` on that fold; those folds are left out of the
    aggregates.
    """

    k_range: tuple[int, ...]
    folds: int
    auc: dict = field(default_factory=dict)
    selected: dict = field(default_factory=dict)
    seed: int | None = None

    def _values(self, method, k):
        v = np.asarray(self.auc[method][k], dtype=float)
        return v[np.isfinite(v)]

    def mean(self, method: str, k: int) -> float:
        v = self._values(method, k)
        return float(v.mean()) if v.size else float("nan")

    def std(self, method: str, k: int) -> float:
        v = self._values(method, k)
        return float(v.std()) if v.size else float("nan")

    def differences(self, k: int) -> np.ndarray:
        """Per-fold ControlBurn minus baseline AUC on folds where both exist."""
        a = np.asarray(self.auc[CONTROLBURN][k], dtype=float)
        b = np.asarray(self.auc[BASELINE][k], dtype=float)
        ok = np.isfinite(a) & np.isfinite(b)
        return a[ok] - b[ok]

    def rows(self) -> list[dict]:
        out = []
        for k in self.k_range:
            for method in METHODS:
                out.append({"k": k, "method": method,
                            "mean_auc": self.mean(method, k),
                            "std_auc": self.std(method, k)})
        return out

    def to_dict(self) -> dict:
        def clean(v):
            return None if not np.isfinite(v) else float(v)
        return {
            "folds": self.folds,
            "seed": self.seed,
            "k_range": list(self.k_range),
            "summary": [{**r, "mean_auc": clean(r["mean_auc"]), "std_auc": clean(r["std_auc"])}
                        for r in self.rows()],
            "per_fold": {m: {str(k): [clean(v) for v in vals] for k, vals in d.items()}
                         for m, d in self.auc.items()},
            "selected": {m: {str(k): [list(s) if s is not None else None for s in vals]
                             for k, vals in d.items()}
                         for m, d in self.selected.items()},
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["k", "method", "mean_auc", "std_auc"],
                           lineterminator="\n")
        w.writeheader()
        for r in self.rows():
            w.writerow({**r, "mean_auc": f"{r['mean_auc']:.6f}",
                        "std_auc": f"{r['std_auc']:.6f}"})
        return buf.getvalue()


class FoldError(RuntimeError):
    """A cross-validation fold failed; ``fold`` names which one."""

    def __init__(self, fold: int, cause: BaseException):
        super().__init__(f"fold {fold} failed: {cause}")
        self.fold = fold


def compare_cv(data: Dataset, k_range, folds: int = 5, rng=None, *,
               grower: str = "bagboost", grower_params: dict | None = None,
               costs=None, n_jobs: int | None = None) -> ComparisonReport:
    """Cross-validated test AUC of ControlBurn versus top-k MDI selection.

    Per fold, one forest is grown and pruned to every ``k`` and one
    all-feature random forest supplies the MDI ranking. Both selections are
    refit with the same seed and scored on the held-out fold.
    """
    if data.task != CLASSIFICATION:
        raise DataValidationError("compare_cv scores ROC-AUC and needs classification data")
    k_range = tuple(sorted({int(k) for k in k_range}))
    if not k_range or k_range[0] < 1 or k_range[-1] > data.p:
        raise ValueError(f"k_range must lie within [1, {data.p}]")
    gen = as_generator(rng)
    seed = int(gen.integers(0, 2**31 - 1))
    gen = np.random.default_rng(seed)
    plan = make_folds(data, folds, gen)
    fold_seeds = gen.integers(0, 2**31 - 1, size=(folds, 3))

    report = ComparisonReport(k_range, folds, seed=seed)
    for m in METHODS:
        report.auc[m] = {k: [] for k in k_range}
        report.selected[m] = {k: [] for k in k_range}

    for f in range(folds):
        try:
            tr, te = plan.split(f)
            train, test = data.subset(tr), data.subset(te)
            cb_seed, base_seed, refit_seed = (int(s) for s in fold_seeds[f])
            sel = controlburn(train, k_range, k_max=max(k_range), grower=grower,
                              grower_params=grower_params, costs=costs,
                              refit_models=False, rng=cb_seed)
            full = make_refit_model(train.task, base_seed, n_jobs=n_jobs)
            full.fit(train.features, train.labels)
            for k in k_range:
                base = baseline_mdi_select(train, k, model=full)
                chosen = {CONTROLBURN: sel[k].selected if k in sel else None,
                          BASELINE: base}
                for m, cols in chosen.items():
                    report.selected[m][k].append(cols)
                    if cols is None:
                        report.auc[m][k].append(float("nan"))
                        continue
                    model = refit(train, cols, refit_seed, n_jobs=n_jobs)
                    s = positive_scores(model, test.features[:, list(cols)])
                    report.auc[m][k].append(roc_auc(s, test.labels))
        except Exception as exc:  # noqa: BLE001 - re-raised with fold id
            raise FoldError(f, exc) from exc
        logger.info("fold %d/%d done", f + 1, folds)
    return report


def semi_synthetic(data: Dataset, targets=(0, 1, 2), copies: int = 5,
                   sigma: float = 0.1, rng=None) -> Dataset:
    """Duplicate the ``targets`` columns ``copies`` times with ``N(0, sigma^2)`` noise."""
    return duplicate_features(data, targets, copies, sigma, rng)


def semi_synthetic_study(data: Dataset, k_range, targets=(0, 1, 2),
                         copies=(3, 5, 7), sigma: float = 0.1, folds: int = 5,
                         rng=None, **compare_kwargs) -> dict[int, ComparisonReport]:
    """Run :func:`compare_cv` on the data with the target columns duplicated
    at each replication level in ``copies``."""
    gen = as_generator(rng)
    out = {}
    for c in copies:
        dup = semi_synthetic(data, targets, c, sigma, gen)
        out[c] = compare_cv(dup, k_range, folds, gen, **compare_kwargs)
    return out


def synthetic_signal(m: int = 2000, duplicate: int = 0, sigma: float = 0.1,
                     rng=None, **kwargs) -> Dataset:
    """Signal dataset, optionally with every informative column duplicated."""
    gen = as_generator(rng)
    d = make_signal_dataset(m, rng=gen, **kwargs)
    if duplicate:
        n_inf = kwargs.get("n_informative", 3)
        d = duplicate_features(d, range(n_inf), duplicate, sigma, gen)
    return d


@dataclass(frozen=True)
class RankPoint:
    """Status of the injected column at one point of the selection path."""

    k: int
    selected: bool
    rank: int | None  # 1 = most important; None when not selected


def uninformative_rank_experiment(data: Dataset, rng=None, *, k_max: int | None = None,
                                  grower: str = "bagboost", grower_params: dict | None = None,
                                  n_jobs: int | None = None) -> list[RankPoint]:
    """Append a uniform random column and follow it along the selection path.

    The first point is the all-feature random forest; then one point per
    realized sparsity, largest first. ``rank`` is the column's MDI rank in
    the refit model, or ``None`` when the column was not selected.
    """
    if data.task != CLASSIFICATION:
        raise DataValidationError("the rank experiment expects classification data")
    gen = as_generator(rng)
    col_seed, sel_seed, full_seed = (int(s) for s in gen.integers(0, 2**31 - 1, size=3))
    noise = np.random.default_rng(col_seed).random(data.m)
    aug = data.with_columns(noise, [UNINFORMATIVE])
    j = aug.p - 1
    k_max = aug.p - 1 if k_max is None else k_max

    trace = []
    full = refit(aug, range(aug.p), full_seed, n_jobs=n_jobs)
    trace.append(RankPoint(aug.p, True, _rank_of(full, list(range(aug.p)), j)))
    sel = controlburn(aug, None, k_max=k_max, grower=grower, grower_params=grower_params,
                      rng=sel_seed, n_jobs=n_jobs)
    for k in sorted(sel.achieved, reverse=True):
        rec = sel[k]
        if j in rec.selected:
            trace.append(RankPoint(k, True, _rank_of(rec.model, list(rec.selected), j)))
        else:
            trace.append(RankPoint(k, False, None))
    return trace


def _rank_of(model, cols, j) -> int:
    order = rank_by_mdi(mdi_importances(model))
    pos = cols.index(j)
    return int(np.flatnonzero(order == pos)[0]) + 1
