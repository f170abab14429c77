import numpy as np
import pytest

from guidelab.oracle import GmmWorld
from guidelab.schedule import make_linear_schedule


def random_world(rng, dim=None, num_components=None) -> GmmWorld:
    """A random diagonal-covariance mixture for property loops."""
    if dim is None:
        dim = int(rng.integers(1, 4))
    if num_components is None:
        num_components = int(rng.integers(1, 5))
    means = rng.normal(scale=3.0, size=(num_components, dim))
    covs = rng.uniform(0.3, 2.5, size=(num_components, dim))
    weights = rng.uniform(0.2, 1.0, size=num_components)
    weights = weights / weights.sum()
    # renormalize exactly so the simplex invariant holds to 1e-12
    weights[-1] = 1.0 - weights[:-1].sum()
    return GmmWorld(means=means, cov_diags=covs, weights=weights)


@pytest.fixture
def short_schedule():
    return make_linear_schedule(10, 0.05, 0.25)
