import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rcnet.netcore import AffineMap, FeedForwardNet

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_affine(rng, out_dim, in_dim, scale=1.0):
    return AffineMap(rng.uniform(-scale, scale, (out_dim, in_dim)),
                     rng.uniform(-scale, scale, out_dim))


def random_net(rng, in_dim, out_dim, width, depth, scale=1.0):
    """Dense ReLU net with `depth` hidden layers of `width` units."""
    dims = [in_dim] + [width] * depth + [out_dim]
    return FeedForwardNet(tuple(random_affine(rng, b, a, scale) for a, b in zip(dims, dims[1:])))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
