import json

import numpy as np
import pytest

from controlburn.dataset import make_signal_dataset
from controlburn.grow import (BAG_BOOSTED, BAGGED, ConvergenceMonitor, Forest, grow_forest,
                              incremental_depth_bag_boosting, incremental_depth_bagging,
                              logistic_loss, oob_improvement, pseudo_residuals, sigmoid)

from .conftest import toy


class TestMonitor:
    def test_spread_inside_tube(self):
        mon = ConvergenceMonitor(5, 1e-3)
        out = [mon.update(v) for v in [0.300, 0.2999, 0.2993, 0.2991, 0.2996]]
        assert out == [False] * 4 + [True]

    def test_short_history(self):
        mon = ConvergenceMonitor(5, 1e-3)
        for v in [0.3, 0.3, 0.3, 0.3]:
            assert not mon.update(v)

    def test_boundary_inclusive(self):
        mon = ConvergenceMonitor(2, 0.5)
        mon.update(1.0)
        assert mon.update(0.5)

    def test_only_tail_counts(self):
        mon = ConvergenceMonitor(3, 1e-3)
        for v in [5.0, 1.0, 1.0]:
            mon.update(v)
        assert not mon.converged
        assert mon.update(1.0)

    def test_reset(self):
        mon = ConvergenceMonitor(1, 1e-3)
        assert mon.update(0.1)
        mon.reset()
        assert mon.history == []
        assert not mon.converged

    @pytest.mark.parametrize("bad", [float("nan"), float("inf")])
    def test_nonfinite_loss_raises(self, bad):
        with pytest.raises(ValueError):
            ConvergenceMonitor().update(bad)

    def test_bad_params(self):
        with pytest.raises(ValueError):
            ConvergenceMonitor(0)
        with pytest.raises(ValueError):
            ConvergenceMonitor(5, 0.0)


class TestResiduals:
    def test_logistic_example(self):
        z = np.log(0.8 / 0.2)
        assert pseudo_residuals([1.0], [z], "classification")[0] == pytest.approx(0.2)

    def test_logistic_finite_difference(self):
        z, h = np.array([0.3, -1.2, 2.0]), 1e-6
        y = np.array([1.0, 0.0, 1.0])
        e = pseudo_residuals(y, z, "classification")
        for i in range(3):
            up, dn = z.copy(), z.copy()
            up[i] += h
            dn[i] -= h
            # logistic_loss is a mean, so scale the difference by the row count
            grad = 3 * (logistic_loss(y, up) - logistic_loss(y, dn)) / (2 * h)
            assert -grad == pytest.approx(e[i], abs=1e-6)

    def test_regression(self):
        np.testing.assert_allclose(pseudo_residuals([1.0, 2.0], [0.5, 3.0], "regression"),
                                   [0.5, -1.0])

    def test_sigmoid_stable(self):
        assert sigmoid(-1000.0) == 0.0
        assert sigmoid(1000.0) == 1.0


class TestOOBImprovement:
    def test_absolute_example(self):
        # |y - F| = 0.6 before, 0.2 after adding the tree's 0.4
        imp = oob_improvement([1.0], [0.4], [[0.4]], [[True]], kind="absolute")
        assert imp.delta == pytest.approx(0.4)
        assert imp.usable == 1

    def test_zero_stage(self):
        imp = oob_improvement([1.0, 0.0], [0.3, 0.1], [[0.0, 0.0]], [[True, True]])
        assert imp.delta == 0.0

    def test_only_oob_trees_vote(self):
        # row 0 is out of bag only for tree 1, row 1 for both
        preds = np.array([[9.0, 1.0], [1.0, 3.0]])
        masks = np.array([[False, True], [True, True]])
        imp = oob_improvement([1.0, 2.0], [0.0, 0.0], preds, masks, kind="absolute")
        # row 0: 1 - 0 = 1; row 1: 2 - |2 - 2| = 2
        assert imp.delta == pytest.approx(1.5)

    def test_skipped_rows_counted(self):
        imp = oob_improvement([1.0, 1.0, 1.0], np.zeros(3), [[1.0, 1.0, 1.0]],
                              [[True, False, True]], kind="squared")
        assert (imp.usable, imp.skipped) == (2, 1)

    def test_no_usable_rows(self):
        with pytest.raises(ValueError):
            oob_improvement([1.0], [0.0], [[1.0]], [[False]])

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            oob_improvement([1.0], [0.0], [[1.0]], [[True]], kind="hinge")


class TestBagging:
    def test_stumps_on_separable_data(self):
        x = np.linspace(-1, 1, 40)
        d = toy(x[:, None], (x > 0).astype(float))
        f = incremental_depth_bagging(d, 1, rng=0)
        assert all(t.depth <= 1 for t in f.trees)
        acc = np.mean((f.predict_proba(d.features) > 0.5) == d.labels)
        assert acc == 1.0

    @pytest.mark.parametrize("dmax", [1, 2, 3])
    def test_at_least_window_trees_per_depth(self, small_clf, dmax):
        f = incremental_depth_bagging(small_clf, dmax, window=5, rng=1)
        assert len(f) >= 5 * dmax
        depths = [mt.depth for mt in f.meta]
        assert depths == sorted(depths)
        assert set(depths) == set(range(1, dmax + 1))
        assert all(t.depth <= mt.depth for t, mt in zip(f.trees, f.meta))

    def test_deterministic(self, small_reg):
        a = incremental_depth_bagging(small_reg, 2, rng=5)
        b = incremental_depth_bagging(small_reg, 2, rng=5)
        assert a.to_json() == b.to_json()

    def test_offset_is_base_rate(self, small_clf):
        f = incremental_depth_bagging(small_clf, 1, rng=0)
        assert f.mode == BAGGED
        assert f.offset == pytest.approx(small_clf.labels.mean())

    def test_tree_columns_sum_to_average(self, small_reg):
        f = incremental_depth_bagging(small_reg, 2, rng=0)
        avg = np.mean([t.predict(small_reg.features) for t in f.trees], axis=0)
        np.testing.assert_allclose(f.decision_function(small_reg.features), avg)

    def test_bad_depth(self, small_clf):
        with pytest.raises(ValueError):
            incremental_depth_bagging(small_clf, 0)

    def test_tree_cap_warns(self, small_reg):
        with pytest.warns(RuntimeWarning, match="tree cap"):
            f = incremental_depth_bagging(small_reg, 3, epsilon=1e-12, rng=0, max_trees=7)
        assert len(f) == 7

    def test_forest_scope_limits_features(self, dup_clf):
        plain = incremental_depth_bagging(dup_clf, 2, rng=0)
        sparse = incremental_depth_bagging(dup_clf, 2, rng=0, sparse_cost=0.05,
                                           sparse_scope="forest")
        n_used = lambda f: np.any([t.used for t in f.trees], axis=0).sum()
        assert n_used(sparse) < n_used(plain)


@pytest.fixture(scope="module")
def boosted():
    # binary features leave few distinct cells to split, so the out-of-bag
    # rule stops growth after a few stages
    d = make_signal_dataset(500, n_informative=3, n_noise=5, rng=0, kind="binary")
    return d, incremental_depth_bag_boosting(d, rng=2)


class TestBagBoosting:
    def test_constant_regression(self):
        d = toy(np.arange(10.0)[:, None], np.full(10, 2.5), "regression")
        f = incremental_depth_bag_boosting(d, rng=0)
        assert f.offset == 2.5
        assert len(f) == 0
        assert f.trace[-1]["event"] == "zero_residuals"
        np.testing.assert_array_equal(f.predict(d.features), np.full(10, 2.5))

    def test_one_class(self):
        d = toy(np.arange(6.0)[:, None], np.ones(6))
        with pytest.warns(RuntimeWarning, match="one class"):
            f = incremental_depth_bag_boosting(d, rng=0)
        assert len(f) == 0
        assert f.offset > 10

    def test_stage_depths(self, boosted):
        _, f = boosted
        assert f.mode == BAG_BOOSTED
        assert 1 <= f.n_stages
        assert len(f) <= 500
        assert f.trace[-1].get("accepted") is False
        assert all(mt.depth == mt.stage for mt in f.meta)
        assert all(t.depth <= mt.depth for t, mt in zip(f.trees, f.meta))

    def test_accepted_stages_improve(self, boosted):
        _, f = boosted
        ends = [r for r in f.trace if r.get("event") == "stage_end"]
        accepted = [r for r in ends if r["accepted"]]
        assert len(accepted) == f.n_stages
        assert all(r["delta"] >= 0 for r in accepted[1:])
        rejected = [r for r in ends if not r["accepted"]]
        assert len(rejected) <= 1
        if rejected:
            assert rejected[0]["delta"] < 0
            assert rejected[0]["stage"] == ends[-1]["stage"]

    def test_training_loss_nonincreasing(self, boosted):
        d, f = boosted
        cols = f.tree_columns(d.features)
        stages = np.array([mt.stage for mt in f.meta])
        losses = [logistic_loss(d.labels, np.full(d.m, f.offset))]
        for s in range(1, f.n_stages + 1):
            raw = f.offset + cols[:, stages <= s].sum(axis=1)
            losses.append(logistic_loss(d.labels, raw))
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_offset_is_log_odds(self, boosted):
        d, f = boosted
        q = d.labels.mean()
        assert f.offset == pytest.approx(np.log(q / (1 - q)))

    def test_deterministic(self, small_reg):
        a = incremental_depth_bag_boosting(small_reg, rng=4)
        b = incremental_depth_bag_boosting(small_reg, rng=4)
        assert a.to_json() == b.to_json()
        assert a.trace_jsonl() == b.trace_jsonl()

    def test_max_stages(self, small_reg):
        f = incremental_depth_bag_boosting(small_reg, rng=0, oob_stopping=False, max_stages=2)
        assert f.n_stages == 2

    def test_json_round_trip(self, small_clf):
        f = incremental_depth_bag_boosting(small_clf, rng=0)
        back = Forest.from_dict(json.loads(f.to_json()))
        np.testing.assert_allclose(back.decision_function(small_clf.features),
                                   f.decision_function(small_clf.features))

    def test_trace_lines_are_json(self, small_clf):
        f = incremental_depth_bag_boosting(small_clf, rng=0)
        rows = [json.loads(line) for line in f.trace_jsonl().splitlines()]
        assert any("train_loss" in r for r in rows)
        assert any(r.get("event") == "stage_end" for r in rows)


def test_grow_forest_dispatch(small_clf):
    assert grow_forest(small_clf, "bag", max_depth=1, rng=0).mode == BAGGED
    assert grow_forest(small_clf, "bagboost", rng=0).mode == BAG_BOOSTED
    with pytest.raises(ValueError):
        grow_forest(small_clf, "ebm")


def test_forest_rejects_decreasing_depths(small_clf):
    f = incremental_depth_bagging(small_clf, 2, rng=0)
    with pytest.raises(ValueError):
        Forest(f.trees[::-1], f.meta[::-1], f.offset, f.mode, f.task, f.n_features)
