import os

import numpy as np
import pytest

from shardrec.dataset import Dataset, SplitSpec, load_interactions, split

ML1M_PATH = os.environ.get("ML1M_PATH", "/root/data/ml1m_all.tsv")


def low_rank_dataset(num_users=60, num_items=40, per_user=8, rank=3, seed=0):
    """Each user interacts with its top-scoring items under a random low-rank model."""
    rng = np.random.default_rng(seed)
    U = rng.normal(size=(num_users, rank))
    V = rng.normal(size=(num_items, rank))
    scores = U @ V.T + 0.3 * rng.normal(size=(num_users, num_items))
    top = np.argsort(-scores, axis=1)[:, :per_user]
    users = np.repeat(np.arange(num_users), per_user)
    return Dataset(users, top.ravel(), num_users, num_items)


@pytest.fixture
def small_data():
    return low_rank_dataset()


@pytest.fixture
def small_split(small_data):
    return split(small_data, SplitSpec(seed=0))


@pytest.fixture(scope="session")
def ml1m():
    if not os.path.exists(ML1M_PATH):
        pytest.skip(f"MovieLens-1m not found at {ML1M_PATH} (set ML1M_PATH or run scripts/fetch_ml1m.py)")
    return load_interactions(ML1M_PATH)


@pytest.fixture(scope="session")
def ml1m_split(ml1m):
    return split(ml1m, SplitSpec(seed=0))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
