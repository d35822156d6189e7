"""Acceptance criteria, one test per criterion.

Each test records a ``criterion N PASS|FAIL: ...`` line that is printed in
the pytest terminal summary (or directly when this file is run as a script).
Thresholds are the stated ones; a failing criterion is reported as failing.
"""

import itertools
import logging
import math
import sys
import time
import warnings

import numpy as np
import pytest

from controlburn.dataset import (REGRESSION, Dataset, duplicate_features, make_signal_dataset,
                                 sample_bag)
from controlburn.eval import positive_scores, roc_auc, uninformative_rank_experiment
from controlburn.grow import incremental_depth_bag_boosting, oob_improvement
from controlburn.prune import LOGISTIC, SQUARED, PruneProblem, sketch_problem, solve
from controlburn.select import (baseline_mdi_select, controlburn, count_fits,
                                fit_count_comparison, refit)
from controlburn.tree import GINI, best_split, node_impurity

try:
    from .conftest import ACCEPTANCE_LINES
except ImportError:  # run as a script
    ACCEPTANCE_LINES = []

SEEDS = range(10)
# feature-sparse growth: a split on a feature no tree has used yet costs 0.01
SPARSE_FOREST = {"sparse_cost": 0.01, "sparse_scope": "forest"}
REFIT_SEED = 7


def record(n, title, ok, detail):
    line = f"criterion {n} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    if __name__ == "__main__":
        print(line, flush=True)
    return ok


def quiet():
    logging.getLogger("controlburn").setLevel(logging.ERROR)
    warnings.simplefilter("ignore", RuntimeWarning)


def random_instance(seed, loss=SQUARED, m_max=200, n_max=50):
    rng = np.random.default_rng(seed)
    m, n = int(rng.integers(20, m_max + 1)), int(rng.integers(1, n_max + 1))
    A = rng.normal(size=(m, n))
    G = (rng.random((6, n)) < 0.4).astype(int)
    G[rng.integers(0, 6, n), np.arange(n)] = 1
    w = np.abs(rng.normal(size=n)) * (rng.random(n) < 0.5)
    z = A @ w
    y = z + 0.5 * rng.normal(size=m) if loss == SQUARED else \
        (rng.random(m) < 1 / (1 + np.exp(-z))).astype(float)
    prob = PruneProblem(A, G, G.sum(axis=0), y, loss)
    return prob.with_lambda(float(rng.uniform(0.01, 0.8)) * prob.lambda_max())


# 1-3: solver -------------------------------------------------------------------

def criterion_1():
    t0 = time.perf_counter()
    worst_kkt = max(solve(random_instance(s)).kkt_residual for s in range(100))
    worst_cf = 0.0
    for s in range(20):
        rng = np.random.default_rng(500 + s)
        m = int(rng.integers(10, 200))
        a = rng.normal(size=m)
        y = rng.normal() * a + rng.normal(size=m)
        u, lam = float(rng.integers(1, 4)), float(rng.uniform(0, 0.5))
        sol = solve(PruneProblem(a[:, None], [[1]], [u], y, lam=lam))
        want = max(0.0, (2 * a @ y / m - lam * u) * m / (2 * a @ a))
        worst_cf = max(worst_cf, abs(sol.w[0] - want))
    elapsed = time.perf_counter() - t0
    ok = worst_kkt <= 1e-6 and worst_cf <= 1e-6 and elapsed < 30
    return record(1, "solver correctness", ok,
                  f"max KKT {worst_kkt:.2e}, max closed-form error {worst_cf:.2e}, "
                  f"{elapsed:.1f}s")


def criterion_2():
    zero = 0
    for s in range(20):
        prob = random_instance(100 + s, loss=LOGISTIC if s % 2 else SQUARED)
        lam = prob.lambda_max() * (1.0 + s / 10)
        zero += bool(np.all(solve(prob.with_lambda(lam)).w == 0.0))
    return record(2, "threshold behaviour", zero == 20, f"{zero}/20 exactly zero")


def criterion_3():
    worst, h = 0.0, 1e-6
    for s in range(50):
        prob = random_instance(200 + s, loss=LOGISTIC if s % 2 else SQUARED, n_max=20)
        w = np.abs(np.random.default_rng(s).normal(size=prob.n))
        g = prob.loss_gradient(w)
        fd = np.array([(prob.loss_value(w + h * e) - prob.loss_value(w - h * e)) / (2 * h)
                       for e in np.eye(prob.n)])
        worst = max(worst, float(np.max(np.abs(g - fd) / np.maximum(np.abs(g), 1e-3))))
    return record(3, "gradient fidelity", worst <= 1e-5,
                  f"max relative error {worst:.2e} over 50 points")


# 4: out-of-bag improvement estimator --------------------------------------------

def _lemma_draw(rng, m):
    X = rng.random((m, 5))
    f = np.sin(3 * X[:, 0]) + 0.5 * X[:, 1] - 0.5 * (X[:, 2] > 0.5)
    return X, np.clip(f + rng.uniform(-0.5, 0.5, m), -1.5, 1.5)


def criterion_4():
    from controlburn.tree import fit_tree
    t0 = time.perf_counter()
    within = 0
    for rep in range(200):
        rng = np.random.default_rng(1000 + rep)
        Xa, ya = _lemma_draw(rng, 300)
        F_n = fit_tree(Xa, ya, 2)
        X, y = _lemma_draw(rng, 500)
        base = F_n.predict(X)
        bag = sample_bag(500, rng)
        t = fit_tree(X[bag.in_bag], (y - base)[bag.in_bag], 3)
        step = t.predict(X)
        est = oob_improvement(y, base, step[None], bag.oob_mask[None], kind="absolute")
        per_row = (np.abs(y - base) - np.abs(y - base - step))[bag.oob_mask]
        se = per_row.std(ddof=1) / math.sqrt(per_row.size)
        Xo, yo = _lemma_draw(rng, 50_000)
        bo = F_n.predict(Xo)
        truth = np.mean(np.abs(yo - bo) - np.abs(yo - bo - t.predict(Xo)))
        within += abs(est.delta - truth) <= 3 * se
    elapsed = time.perf_counter() - t0
    ok = within >= 190 and elapsed < 120
    return record(4, "OOB improvement estimator", ok,
                  f"{within}/200 within 3 SE, {elapsed:.1f}s")


# 5-7: duplicated signal features ------------------------------------------------

def duplicated_runs(duplicate: bool):
    """Per seed: ControlBurn and MDI-baseline selections at k=3 and test AUCs."""
    quiet()
    runs = []
    for seed in SEEDS:
        d = make_signal_dataset(2000, kind="binary", rng=seed)
        if duplicate:
            d = duplicate_features(d, [0, 1, 2], 5, 0.1, seed + 100)
        train, test = d.subset(np.arange(1500)), d.subset(np.arange(1500, 2000))
        res = controlburn(train, 3, rng=seed, grower_params=SPARSE_FOREST, refit_models=False)
        base = baseline_mdi_select(train, 3, rng=seed)

        def auc(cols):
            model = refit(train, cols, REFIT_SEED)
            return roc_auc(positive_scores(model, test.features[:, list(cols)]), test.labels)

        cb = res[3].selected if 3 in res else None
        runs.append({"seed": seed, "data": d, "train": train, "result": res,
                     "cb": cb, "base": base,
                     "auc_cb": auc(cb) if cb is not None else float("nan"),
                     "auc_base": auc(base)})
    return runs


def criterion_5(dup, plain, elapsed):
    d_dup = np.array([r["auc_cb"] - r["auc_base"] for r in dup])
    d_plain = np.array([r["auc_cb"] - r["auc_base"] for r in plain])
    m_dup, m_plain = np.nanmean(d_dup), np.nanmean(d_plain)
    missing = int(np.isnan(d_dup).sum() + np.isnan(d_plain).sum())
    ok = m_dup >= 0.02 and abs(m_plain) <= 0.01 and elapsed < 300
    return record(5, "correlation-bias robustness", ok,
                  f"duplicated mean diff {m_dup:+.4f}, unduplicated {m_plain:+.4f}, "
                  f"{missing} runs without k=3 excluded, {elapsed:.0f}s")


def criterion_6(dup):
    hits = 0
    for r in dup:
        if r["cb"] is None:
            continue
        names = r["data"].names
        groups = [{j for j, n in enumerate(names) if n == f"x{t}" or n.startswith(f"x{t}_dup")}
                  for t in range(3)]
        hits += all(len(g & set(r["cb"])) <= 1 for g in groups)
    return record(6, "group collapse", hits >= 9,
                  f"{hits}/10 runs with at most one member per group; "
                  f"runs without k=3 count as misses")


def coverage(train, seed, forest=None, grower_params=None):
    res = controlburn(train, None, rng=seed, forest=forest, grower_params=grower_params,
                      refit_models=False)
    assert all(len(res[k].selected) == k for k in res.achieved)
    return len(res.achieved)


def criterion_7(dup):
    levels = [coverage(r["train"], r["seed"], forest=r["result"].forest) for r in dup]
    med = float(np.median(levels))
    # not gating: the same data under the default grower and under depth-2 bagging
    diag = {}
    for label, grower, params in (("default bag-boosting", "bagboost", None),
                                  ("incremental bagging d_max=2", "bag", {"max_depth": 2})):
        diag[label] = float(np.median([
            len(controlburn(r["train"], None, rng=r["seed"], grower=grower,
                            grower_params=params, refit_models=False).achieved)
            for r in dup]))
    extra = ", ".join(f"{k} median {v:g}" for k, v in diag.items())
    return record(7, "bisection coverage", med >= 8,
                  f"realized levels per seed {levels}, median {med:g}, need >= 8; "
                  f"diagnostics, not gating: {extra}")


# 8: out-of-bag stopping ---------------------------------------------------------

def _stop_draw(rng, m, p=10):
    X = rng.random((m, p))
    f = (np.sin(np.pi * X[:, 0] * X[:, 1]) + 2 * (X[:, 2] - 0.5) ** 2
         + 0.5 * X[:, 3] + 0.25 * X[:, 4])
    return X, f + 0.5 * rng.standard_normal(m)


def criterion_8():
    quiet()
    diffs, consistent = [], True
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        X, y = _stop_draw(rng, 1000)
        Xt, yt = _stop_draw(rng, 20_000)
        d = Dataset(X, y, tuple(f"f{i}" for i in range(X.shape[1])), REGRESSION)
        # grow past the stopping point to trace the whole test-error curve
        full = incremental_depth_bag_boosting(d, rng=seed, oob_stopping=False, max_stages=12)
        deltas = [e["delta"] for e in full.trace if e.get("event") == "stage_end"]
        first_neg = next((s for s in range(2, len(deltas) + 1) if deltas[s - 1] < 0),
                         len(deltas) + 1)
        stop = first_neg - 1
        stages = np.array([mt.stage for mt in full.meta])
        cols = full.tree_columns(Xt)
        errs = [np.mean((yt - full.offset - cols[:, stages <= s].sum(axis=1)) ** 2)
                for s in range(1, stages.max() + 1)]
        best = int(np.argmin(errs)) + 1
        diffs.append(abs(stop - best))
        if seed < 3:
            stopped = incremental_depth_bag_boosting(d, rng=seed)
            consistent &= stopped.n_stages == stop
    med = float(np.median(diffs))
    return record(8, "OOB stopping sanity", med <= 2 and consistent,
                  f"|stop - best| per seed {diffs}, median {med:g}")


# 9: sketching -------------------------------------------------------------------

def criterion_9():
    m, n = 2000, 40
    s = math.ceil(20 * math.log(m))
    gaps = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((m, n))
        w_true = np.maximum(0, rng.standard_normal(n)) * (rng.random(n) < 0.3)
        y = A @ w_true + rng.standard_normal(m)
        G = (rng.random((10, n)) < 0.3).astype(np.int8)
        prob = PruneProblem(A, G, rng.integers(1, 4, n).astype(float), y)
        prob = prob.with_lambda(0.1 * prob.lambda_max())
        full = solve(prob)
        sk = solve(sketch_problem(prob, s, rng))
        gaps.append((prob.objective(sk.w) - full.objective) / full.objective)
    med = float(np.median(gaps))
    return record(9, "sketching", med <= 0.10,
                  f"s={s}, median relative objective gap {med:.3f} over 20 seeds")


# 10: fit counts -----------------------------------------------------------------

def criterion_10():
    quiet()
    seen = {}
    for p in (20, 50):
        d = make_signal_dataset(300, n_informative=3, n_noise=p - 3, rng=p)
        seen[p] = count_fits(d, 10, rng=0, grower="bag", grower_params={"max_depth": 2})
    ok = all(seen[p] == fit_count_comparison(p, 10) == (1, p - 10) for p in seen)
    return record(10, "fit-count claim", ok,
                  ", ".join(f"p={p}: grow {g}, RFE {r}" for p, (g, r) in seen.items()))


# 11: uninformative feature ------------------------------------------------------

def criterion_11():
    quiet()
    excluded = 0
    for seed in SEEDS:
        d = make_signal_dataset(2000, n_informative=5, n_noise=5, kind="binary", rng=seed)
        trace = uninformative_rank_experiment(d, rng=seed, k_max=10,
                                              grower_params=SPARSE_FOREST)
        small = [pt for pt in trace if pt.k <= 5]
        excluded += bool(small) and not any(pt.selected for pt in small)
    return record(11, "uninformative-feature demotion", excluded >= 8,
                  f"excluded at every realized k <= 5 in {excluded}/10 runs")


# 12: brute-force oracles --------------------------------------------------------

def _enumerate_split(X, y):
    best = None
    for f in range(X.shape[1]):
        vals = np.unique(X[:, f])
        for lo, hi in zip(vals[:-1], vals[1:]):
            left = X[:, f] <= (lo + hi) / 2
            child = (left.sum() * node_impurity(y[left], GINI)
                     + (~left).sum() * node_impurity(y[~left], GINI)) / y.size
            if best is None or child < best[1] - 1e-12:
                best = (f, child)
    return best


def criterion_12():
    rng = np.random.default_rng(0)
    split_ok = 0
    for _ in range(300):
        m, p = int(rng.integers(2, 31)), int(rng.integers(1, 5))
        X = rng.integers(0, 5, size=(m, p)).astype(float)
        y = rng.integers(0, 2, size=m).astype(float)
        got, want = best_split(X, y, GINI), _enumerate_split(X, y)
        split_ok += (got is None and want is None) or (
            got is not None and want is not None and got[0] == want[0]
            and abs(got[2] - want[1]) <= 1e-12)
    grid_ok = 0
    for s in range(10):
        rng = np.random.default_rng(300 + s)
        A = rng.normal(size=(60, 3))
        z = A @ np.abs(rng.normal(size=3))
        if s % 2:
            y, loss = (rng.random(60) < 1 / (1 + np.exp(-z))).astype(float), LOGISTIC
        else:
            y, loss = z + 0.3 * rng.normal(size=60), SQUARED
        prob = PruneProblem(A, np.eye(3), np.ones(3), y, loss, lam=0.05)
        sol = solve(prob)
        grid = np.linspace(0, max(2.0, 1.5 * sol.w.max()), 41)
        best = min(prob.objective(np.array(w)) for w in itertools.product(grid, repeat=3))
        tol = 5 * grid[1] ** 2 * max(np.linalg.norm(prob.A, 2) ** 2 / prob.m, 1e-12)
        grid_ok += sol.objective <= best + 1e-12 and best - sol.objective <= tol
    return record(12, "brute-force oracles", split_ok == 300 and grid_ok == 10,
                  f"splits {split_ok}/300, 3-variable grid {grid_ok}/10")


# pytest entry points ------------------------------------------------------------

@pytest.fixture(scope="module")
def duplicated():
    t0 = time.perf_counter()
    dup, plain = duplicated_runs(True), duplicated_runs(False)
    return dup, plain, time.perf_counter() - t0


def test_criterion_1_solver_correctness():
    assert criterion_1()


def test_criterion_2_threshold():
    assert criterion_2()


def test_criterion_3_gradients():
    assert criterion_3()


def test_criterion_4_oob_estimator():
    assert criterion_4()


def test_criterion_5_correlation_bias(duplicated):
    assert criterion_5(*duplicated)


def test_criterion_6_group_collapse(duplicated):
    assert criterion_6(duplicated[0])


def test_criterion_7_bisection_coverage(duplicated):
    assert criterion_7(duplicated[0])


def test_criterion_8_oob_stopping():
    assert criterion_8()


def test_criterion_9_sketching():
    assert criterion_9()


def test_criterion_10_fit_counts():
    assert criterion_10()


def test_criterion_11_uninformative():
    assert criterion_11()


def test_criterion_12_oracles():
    assert criterion_12()


if __name__ == "__main__":
    only = {int(a) for a in sys.argv[1:]}
    want = lambda n: not only or n in only  # noqa: E731
    for n, fn in [(1, criterion_1), (2, criterion_2), (3, criterion_3), (4, criterion_4)]:
        if want(n):
            fn()
    if only & {5, 6, 7} or not only:
        t0 = time.perf_counter()
        dup = duplicated_runs(True)
        plain = duplicated_runs(False) if want(5) else None
        elapsed = time.perf_counter() - t0
        if want(5):
            criterion_5(dup, plain, elapsed)
        if want(6):
            criterion_6(dup)
        if want(7):
            criterion_7(dup)
    for n, fn in [(8, criterion_8), (9, criterion_9), (10, criterion_10),
                  (11, criterion_11), (12, criterion_12)]:
        if want(n):
            fn()
