import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def random_graph(rng: np.random.Generator, n: int, p: float):
    from sbmcluster import SimpleGraph

    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(iu.size) < p
    return SimpleGraph.from_edges(n, iu[keep], ju[keep])


def random_ratings(rng: np.random.Generator, n_users: int, n_items: int, n_obs: int, R: int = 5):
    from sbmcluster import RatingDataset

    n_obs = min(n_obs, n_users * n_items)
    pairs = rng.choice(n_users * n_items, size=n_obs, replace=False)
    return RatingDataset(n_users, n_items, np.arange(1, R + 1), pairs // n_items, pairs % n_items,
                         rng.integers(0, R, size=n_obs))


@pytest.fixture
def np_rng():
    return np.random.default_rng(12345)


# acceptance lines are echoed at the end of the session so they survive output capture
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
