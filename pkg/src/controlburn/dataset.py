"""Data ingestion, bootstrap resampling, fold plans and synthetic data."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

CLASSIFICATION = "classification"
REGRESSION = "regression"
TASKS = (CLASSIFICATION, REGRESSION)


class DataValidationError(ValueError):
    """Raised when input data violates a dataset contract."""


def as_generator(seed=None) -> np.random.Generator:
    """Coerce a seed, ``None`` or an existing generator into a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Feature matrix, response and metadata for one learning task.

    Parameters
    ----------
    features : ndarray of shape (m, p)
    labels : ndarray of shape (m,)
        ``{0, 1}`` for classification, reals for regression.
    names : sequence of str
        Unique feature names, one per column.
    task : {"classification", "regression"}
    """

    features: np.ndarray
    labels: np.ndarray
    names: tuple[str, ...]
    task: str = CLASSIFICATION

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=float).ravel()
        if X.ndim != 2:
            raise DataValidationError("features must be a 2-D matrix")
        m, p = X.shape
        if m < 1 or p < 1:
            raise DataValidationError(f"need m >= 1 and p >= 1, got {X.shape}")
        if y.shape[0] != m:
            raise DataValidationError(f"{m} feature rows but {y.shape[0]} labels")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DataValidationError("missing or non-finite values are not allowed")
        if self.task not in TASKS:
            raise DataValidationError(f"unknown task {self.task!r}")
        if self.task == CLASSIFICATION and not np.all((y == 0) | (y == 1)):
            bad = y[(y != 0) & (y != 1)][0]
            raise DataValidationError(
                f"classification labels must be 0/1, found {bad:g}")
        names = tuple(str(n) for n in self.names)
        if len(names) != p:
            raise DataValidationError(f"{len(names)} names for {p} columns")
        if len(set(names)) != p:
            raise DataValidationError("feature names must be unique")
        object.__setattr__(self, "features", _readonly(X))
        object.__setattr__(self, "labels", _readonly(y))
        object.__setattr__(self, "names", names)

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def subset(self, rows=None, columns=None) -> "Dataset":
        """Row and/or column restriction, preserving order."""
        X, y, names = self.features, self.labels, self.names
        if rows is not None:
            rows = np.asarray(rows)
            X, y = X[rows], y[rows]
        if columns is not None:
            columns = [int(c) for c in columns]
            X = X[:, columns]
            names = tuple(names[c] for c in columns)
        return Dataset(X, y, names, self.task)

    def with_columns(self, extra: np.ndarray, names: Sequence[str]) -> "Dataset":
        extra = np.asarray(extra, dtype=float).reshape(self.m, -1)
        return Dataset(np.hstack([self.features, extra]), self.labels,
                       self.names + tuple(names), self.task)


def load_csv(path, label_column: str, task: str = CLASSIFICATION) -> Dataset:
    """Read a headered, comma-delimited numeric CSV into a :class:`Dataset`.

    Every non-label column becomes a feature, in file order. Categorical
    columns must be encoded numerically beforehand.
    """
    path = Path(path)
    if not path.is_file():
        raise DataValidationError(f"no such file: {path}")
    if task not in TASKS:
        raise DataValidationError(f"unknown task {task!r}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataValidationError(f"{path} is empty") from None
        if label_column not in header:
            raise DataValidationError(
                f"label column {label_column!r} not found in header {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataValidationError(
                    f"row {lineno}: expected {len(header)} cells, got {len(row)}")
            values = []
            for col, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataValidationError(
                        f"row {lineno}, column {col!r}: non-numeric value {cell!r}"
                    ) from None
                if not math.isfinite(v):
                    raise DataValidationError(
                        f"row {lineno}, column {col!r}: missing or non-finite value")
                values.append(v)
            rows.append(values)
    if not rows:
        raise DataValidationError(f"{path} has no data rows")
    table = np.array(rows, dtype=float)
    li = header.index(label_column)
    keep = [i for i in range(len(header)) if i != li]
    return Dataset(table[:, keep], table[:, li],
                   tuple(header[i] for i in keep), task)


def save_csv(data: Dataset, path, label_column: str = "y") -> None:
    """Write ``data`` as CSV with the label in the last column."""
    if label_column in data.names:
        raise DataValidationError(f"label column {label_column!r} clashes with a feature")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(data.names) + [label_column])
        for x, y in zip(data.features, data.labels):
            w.writerow([repr(float(v)) for v in x] + [repr(float(y))])


@dataclass(frozen=True)
class Bag:
    """A bootstrap resample: ``in_bag`` row multiset and its out-of-bag rows."""

    in_bag: np.ndarray
    oob: np.ndarray
    oob_mask: np.ndarray = field(repr=False)

    @property
    def m(self) -> int:
        return self.in_bag.shape[0]


def sample_bag(m: int, rng) -> Bag:
    """Draw ``m`` row indices uniformly with replacement."""
    if m < 1:
        raise ValueError("cannot sample a bag from zero rows")
    rng = as_generator(rng)
    in_bag = rng.integers(0, m, size=m)
    mask = np.ones(m, dtype=bool)
    mask[in_bag] = False
    return Bag(_readonly(in_bag), _readonly(np.flatnonzero(mask)), _readonly(mask))


def duplicate_features(data: Dataset, targets: Sequence[int], copies: int,
                       sigma: float, rng) -> Dataset:
    """Append noisy replicas of selected columns.

    Each replica is the source column plus i.i.d. ``N(0, sigma**2)`` noise and
    is named ``"<source>_dup<i>"`` with ``i`` counting from 1.
    """
    if copies < 1:
        raise ValueError("copies must be >= 1")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    targets = [int(t) for t in targets]
    for t in targets:
        if not 0 <= t < data.p:
            raise IndexError(f"feature index {t} out of range for p={data.p}")
    rng = as_generator(rng)
    cols, names = [], []
    for t in targets:
        for i in range(1, copies + 1):
            name = f"{data.names[t]}_dup{i}"
            if name in data.names or name in names:
                raise DataValidationError(f"duplicate name collision: {name!r}")
            col = data.features[:, t].copy()
            if sigma > 0:
                col = col + rng.normal(0.0, sigma, size=data.m)
            cols.append(col)
            names.append(name)
    return data.with_columns(np.column_stack(cols), names)


@dataclass(frozen=True)
class FoldPlan:
    """Assignment of every row to one of ``k`` folds."""

    k: int
    assignments: np.ndarray

    def split(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(train_rows, test_rows)`` for ``fold``."""
        test = self.assignments == fold
        return np.flatnonzero(~test), np.flatnonzero(test)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.k)


def make_folds(data: Dataset, k: int, rng) -> FoldPlan:
    """Shuffled k-fold partition, stratified by class for classification.

    Rows are dealt round-robin (class by class when stratifying) so fold sizes
    and per-class fold counts each differ by at most one.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if data.m < k:
        raise DataValidationError(f"{data.m} rows cannot fill {k} folds")
    rng = as_generator(rng)
    assignments = np.empty(data.m, dtype=np.int64)
    if data.task == CLASSIFICATION:
        groups = [np.flatnonzero(data.labels == c) for c in (0.0, 1.0)]
        for c, g in zip((0, 1), groups):
            if 0 < g.size < k:
                raise DataValidationError(
                    f"class {c} has {g.size} members, fewer than k={k} folds")
    else:
        groups = [np.arange(data.m)]
    start = 0
    for g in groups:
        g = rng.permutation(g)
        assignments[g] = (start + np.arange(g.size)) % k
        start = (start + g.size) % k
    return FoldPlan(k, _readonly(assignments))


def make_signal_dataset(m: int, n_informative: int = 3, n_noise: int = 7,
                        task: str = CLASSIFICATION, rng=None,
                        weights: Sequence[float] | None = None,
                        kind: str = "gaussian", noise: float = 1.0) -> Dataset:
    """Independent features with a sparse additive response.

    The first ``n_informative`` columns (``x0, x1, ...``) carry signal with the
    given ``weights`` (default ``2, 1.5, 1.0, ...`` decreasing by 0.5 with a
    floor of 0.5); the remaining ``n_noise`` columns (``noise0, ...``) are
    independent of the response.

    ``kind="gaussian"`` draws standard-normal features and uses them directly
    in the linear predictor; ``kind="binary"`` draws fair 0/1 features and
    uses ``2x - 1``. Classification labels are Bernoulli draws of the
    logistic link; regression adds Gaussian noise of std ``noise``.
    """
    rng = as_generator(rng)
    if weights is None:
        weights = [max(2.0 - 0.5 * i, 0.5) for i in range(n_informative)]
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (n_informative,):
        raise ValueError("need one weight per informative feature")
    p = n_informative + n_noise
    if kind == "gaussian":
        X = rng.standard_normal((m, p))
        z = X[:, :n_informative] @ weights
    elif kind == "binary":
        X = (rng.random((m, p)) < 0.5).astype(float)
        z = (2.0 * X[:, :n_informative] - 1.0) @ weights
    else:
        raise ValueError(f"unknown kind {kind!r}")
    if task == CLASSIFICATION:
        y = (rng.random(m) < 1.0 / (1.0 + np.exp(-z))).astype(float)
    else:
        y = z + noise * rng.standard_normal(m)
    names = [f"x{i}" for i in range(n_informative)] + [f"noise{i}" for i in range(n_noise)]
    return Dataset(X, y, tuple(names), task)
