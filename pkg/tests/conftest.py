from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from reps.data_model import CATEGORICAL, CONTINUOUS, Dataset, FeatureSpec, Schema

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def make_schema(n_cont: int = 2, cat_sizes=(3,)) -> Schema:
    feats = [FeatureSpec(f"x{j}", CONTINUOUS) for j in range(n_cont)]
    feats += [FeatureSpec(f"c{j}", CATEGORICAL, tuple(f"k{v}" for v in range(k))) for j, k in enumerate(cat_sizes)]
    return Schema(tuple(feats), "y", ("no", "yes"))


def random_dataset(rng: np.random.Generator, n: int = 40, n_cont: int = 2, cat_sizes=(3,),
                   scale: float = 1.0) -> Dataset:
    schema = make_schema(n_cont, cat_sizes)
    cont = np.clip(rng.normal(0.0, scale, size=(n, n_cont)), -3.0, 3.0)
    cat = np.column_stack([rng.integers(0, k, size=n) for k in cat_sizes]) if cat_sizes else np.zeros((n, 0))
    labels = rng.integers(0, 2, size=n)
    return Dataset(schema, cont, cat, labels)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_data(rng):
    return random_dataset(rng, n=60)


# one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
