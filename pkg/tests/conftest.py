import numpy as np
import pytest

from tribody import fixtures
from tribody.dynamics import SystemState


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def figure8():
    return fixtures.figure8()


def random_state(rng, dim=2, spread=1.0, speed=0.5, masses=(1.0, 1.0, 1.0)):
    """Well-separated random three-body state."""
    while True:
        q = rng.uniform(-spread, spread, (3, dim))
        d = np.linalg.norm(q[:, None] - q[None], axis=-1)
        if d[np.triu_indices(3, 1)].min() > 0.2:
            return SystemState(q, speed * rng.standard_normal((3, dim)), np.asarray(masses), 0.0)
