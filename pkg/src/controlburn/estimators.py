"""scikit-learn compatible wrappers around the ControlBurn pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.feature_selection import SelectorMixin
from sklearn.utils.multiclass import type_of_target
from sklearn.utils.validation import check_is_fitted, validate_data

from .dataset import CLASSIFICATION, REGRESSION, Dataset
from .select import K_MAX, controlburn


class _BaseControlBurn(SelectorMixin, BaseEstimator):
    """Shared fit logic. Subclasses set ``_task``."""

    _task: str

    def __init__(self, n_features=None, alpha=None, grower="bagboost", max_depth=5,
                 window=5, epsilon=1e-3, sparse_cost=0.0, sparse_scope="tree",
                 costs=None, refit=True, n_jobs=None, random_state=None):
        self.n_features = n_features
        self.alpha = alpha
        self.grower = grower
        self.max_depth = max_depth
        self.window = window
        self.epsilon = epsilon
        self.sparse_cost = sparse_cost
        self.sparse_scope = sparse_scope
        self.costs = costs
        self.refit = refit
        self.n_jobs = n_jobs
        self.random_state = random_state

    def _grower_params(self):
        params = {"window": self.window, "epsilon": self.epsilon,
                  "sparse_cost": self.sparse_cost, "sparse_scope": self.sparse_scope}
        if self.grower == "bag":
            params["max_depth"] = self.max_depth
        return params

    def _prepare_y(self, y):
        return np.asarray(y, dtype=float)

    def fit(self, X, y):
        """Grow a forest, prune it to the requested sparsity and refit.

        Exactly one of ``n_features`` (default 3 when neither is set) or
        ``alpha`` (a fixed penalty) controls the sparsity.
        """
        X, y = validate_data(self, X, y, dtype=np.float64, ensure_min_samples=2)
        y_fit = self._prepare_y(y)
        names = getattr(self, "feature_names_in_", None)
        if names is None:
            names = [f"x{i}" for i in range(X.shape[1])]
        data = Dataset(X, y_fit, tuple(names), self._task)

        if self.n_features is not None and self.alpha is not None:
            raise ValueError("set at most one of n_features and alpha")
        k = None if self.alpha is not None else (3 if self.n_features is None
                                                   else int(self.n_features))
        if k is not None and not 1 <= k <= X.shape[1]:
            raise ValueError(f"n_features must lie in [1, {X.shape[1]}]")
        result = controlburn(data, k, k_max=max(k, K_MAX) if k else K_MAX,
                             lam=self.alpha, grower=self.grower,
                             grower_params=self._grower_params(), costs=self.costs,
                             refit_models=self.refit, rng=self.random_state,
                             n_jobs=self.n_jobs)
        self.result_ = result
        self.forest_ = result.forest
        record = next(iter(result.records.values()), None)
        mask = np.zeros(X.shape[1], dtype=bool)
        if record is not None:
            mask[list(record.selected)] = True
            self.lambda_ = record.lam
            self.estimator_ = record.model
        else:
            self.lambda_ = self.alpha
            self.estimator_ = None
        self.support_ = mask
        self.n_selected_ = int(mask.sum())
        return self

    def _get_support_mask(self):
        check_is_fitted(self, "support_")
        return self.support_

    def _check_refit(self):
        check_is_fitted(self, "support_")
        if self.estimator_ is None:
            raise ValueError("no refit model: nothing selected or refit=False")

    def predict(self, X):
        """Predict with the forest refit on the selected features."""
        self._check_refit()
        return self.estimator_.predict(self.transform(X))

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.input_tags.allow_nan = False
        return tags


class ControlBurnClassifier(ClassifierMixin, _BaseControlBurn):
    """Feature selection for binary classification by pruning a forest.

    A bag-boosted (or incrementally bagged) forest is grown once, then a
    non-negative weighted lasso over its trees keeps a sparse subset of
    trees; the features those trees use are selected and a random forest is
    refit on them.

    Parameters
    ----------
    n_features : int, optional
        Number of features to keep (default 3). The pruning penalty is found
        by bisection.
    alpha : float, optional
        Fixed pruning penalty; mutually exclusive with ``n_features``.
    grower : {"bagboost", "bag"}
    max_depth : int
        Deepest stage of the ``"bag"`` grower.
    sparse_cost : float
        Extra split cost on features not yet used (0 gives plain CART).
    sparse_scope : {"tree", "forest"}
    costs : CostSpec, optional
        Per-feature or grouped acquisition costs.
    random_state : int, Generator or None

    Attributes
    ----------
    support_ : ndarray of bool
    estimator_ : RandomForestClassifier
        Refit model on the selected columns.
    classes_ : ndarray
    forest_ : Forest
    lambda_ : float

    Examples
    --------
    >>> from controlburn.dataset import make_signal_dataset
    >>> d = make_signal_dataset(300, rng=0)
    >>> sel = ControlBurnClassifier(n_features=2, random_state=0).fit(d.features, d.labels)
    >>> int(sel.get_support().sum())
    2
    """

    _task = CLASSIFICATION

    def _prepare_y(self, y):
        if type_of_target(y) != "binary":
            raise ValueError("ControlBurnClassifier supports binary targets only")
        self.classes_, encoded = np.unique(y, return_inverse=True)
        return encoded.astype(float)

    def predict(self, X):
        self._check_refit()
        idx = self.estimator_.predict(self.transform(X)).astype(int)
        return self.classes_[idx]

    def predict_proba(self, X):
        self._check_refit()
        return self.estimator_.predict_proba(self.transform(X))


class ControlBurnRegressor(RegressorMixin, _BaseControlBurn):
    """Regression counterpart of :class:`ControlBurnClassifier`."""

    _task = REGRESSION

