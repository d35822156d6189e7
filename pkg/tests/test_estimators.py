import numpy as np
import pytest
from sklearn.base import clone
from sklearn.pipeline import make_pipeline

from controlburn import ControlBurnClassifier, ControlBurnRegressor
from controlburn.dataset import make_signal_dataset


@pytest.fixture(scope="module")
def small_clf_module():
    return make_signal_dataset(300, n_informative=3, n_noise=3, rng=1)


@pytest.fixture(scope="module")
def fitted(small_clf_module):
    d = small_clf_module
    return d, ControlBurnClassifier(n_features=2, random_state=0).fit(d.features, d.labels)


def test_params_round_trip():
    est = ControlBurnClassifier(n_features=4, sparse_cost=0.01, random_state=3)
    params = est.get_params()
    assert params["n_features"] == 4 and params["sparse_cost"] == 0.01
    twin = clone(est)
    assert twin.get_params() == params
    assert twin is not est


def test_selects_requested_count(fitted):
    d, est = fitted
    assert est.n_selected_ == 2
    assert est.get_support().sum() == 2
    assert est.transform(d.features).shape == (d.m, 2)
    assert est.estimator_.n_features_in_ == 2


def test_predictions(fitted):
    d, est = fitted
    pred = est.predict(d.features)
    assert set(np.unique(pred)) <= {0.0, 1.0}
    proba = est.predict_proba(d.features)
    assert proba.shape == (d.m, 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert est.score(d.features, d.labels) > 0.7


def test_string_labels(small_clf_module):
    d = small_clf_module
    y = np.where(d.labels == 1, "yes", "no")
    est = ControlBurnClassifier(n_features=1, random_state=0).fit(d.features, y)
    assert list(est.classes_) == ["no", "yes"]
    assert set(est.predict(d.features)) <= {"no", "yes"}


def test_deterministic(small_clf_module):
    d = small_clf_module
    a = ControlBurnClassifier(n_features=2, random_state=5).fit(d.features, d.labels)
    b = ControlBurnClassifier(n_features=2, random_state=5).fit(d.features, d.labels)
    np.testing.assert_array_equal(a.support_, b.support_)
    assert a.lambda_ == b.lambda_


def test_fixed_alpha(small_clf_module):
    d = small_clf_module
    est = ControlBurnClassifier(alpha=1e-3, random_state=0, refit=False).fit(d.features, d.labels)
    assert est.lambda_ == 1e-3
    with pytest.raises(ValueError):
        est.predict(d.features)


def test_invalid(small_clf_module):
    d = small_clf_module
    with pytest.raises(ValueError):
        ControlBurnClassifier(n_features=2, alpha=0.1).fit(d.features, d.labels)
    with pytest.raises(ValueError):
        ControlBurnClassifier(n_features=d.p + 1).fit(d.features, d.labels)
    with pytest.raises(ValueError):
        ControlBurnClassifier().fit(d.features, np.arange(d.m) % 3)


def test_regressor_in_pipeline(small_reg):
    pipe = make_pipeline(ControlBurnRegressor(n_features=2, grower="bag", max_depth=2,
                                              random_state=0),
                         "passthrough")
    pipe.fit(small_reg.features, small_reg.labels)
    sel = pipe[0]
    assert sel.n_selected_ == 2
    assert sel.score(small_reg.features, small_reg.labels) > 0.5


def test_dataframe_names(small_clf_module):
    pd = pytest.importorskip("pandas")
    d = small_clf_module
    df = pd.DataFrame(d.features, columns=d.names)
    est = ControlBurnClassifier(n_features=2, random_state=0).fit(df, d.labels)
    assert len(est.get_feature_names_out()) == 2
    assert set(est.get_feature_names_out()) <= set(d.names)
