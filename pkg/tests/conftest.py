import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from stackshap.dataset import Dataset, FeatureSchema, FeatureSpec  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_dataset(X, y=None, level=None, country=None, kinds=None, groups=None):
    X = np.asarray(X, dtype=float)
    n, j = X.shape
    kinds = kinds or ["continuous"] * j
    groups = groups or ["student_family"] * j
    schema = FeatureSchema([FeatureSpec(f"x{i}", kinds[i], groups[i]) for i in range(j)])
    if level is None:
        level = np.zeros(n, dtype=int) if y is None else np.where(np.asarray(y) == 1, 0, 1)
    country = np.array(["AA"] * n, dtype=object) if country is None else country
    return Dataset(schema, X, country, level, y)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def logistic_data(rng):
    """800 rows, three informative columns and two noise columns."""
    X = rng.standard_normal((800, 5))
    eta = 0.3 + X @ np.array([1.5, -1.0, 0.5, 0.0, 0.0])
    y = (rng.random(800) < 1 / (1 + np.exp(-eta))).astype(int)
    return X, y


# Filled by tests/test_acceptance.py; one (number, title, passed, detail) tuple per criterion.
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {number:>2}. {title}  ({detail})")
