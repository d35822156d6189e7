import warnings

import numpy as np
import pytest

from controlburn.dataset import Dataset, duplicate_features, make_signal_dataset


# one "criterion N PASS/FAIL" line per acceptance criterion, filled by test_acceptance
ACCEPTANCE_LINES: list[str] = []


def pytest_configure(config):
    warnings.filterwarnings("ignore", message="tree cap", category=RuntimeWarning)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_clf():
    return make_signal_dataset(400, n_informative=3, n_noise=3, rng=7)


@pytest.fixture(scope="session")
def small_reg():
    return make_signal_dataset(400, n_informative=3, n_noise=3, task="regression",
                               rng=8, noise=0.3)


@pytest.fixture(scope="session")
def dup_clf():
    base = make_signal_dataset(600, kind="binary", rng=3)
    return duplicate_features(base, [0, 1, 2], 3, 0.1, 4)


def toy(X, y, task="classification"):
    X = np.asarray(X, dtype=float)
    return Dataset(X, y, tuple(f"f{i}" for i in range(X.shape[1])), task)
