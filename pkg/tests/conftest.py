import numpy as np
import pytest

from gmmalign.geom3d import RigidTransform, random_rotation
from gmmalign.latent_gmm import Gmm


def make_rng(seed=0):
    return np.random.default_rng(seed)


def random_gamma(rng, n, j):
    g = rng.uniform(0.05, 1.0, size=(n, j))
    return g / g.sum(axis=1, keepdims=True)


def random_gmm(rng, j, spread=1.0, var_range=(0.05, 0.5)):
    w = rng.uniform(0.2, 1.0, j)
    return Gmm(w / w.sum(), rng.normal(scale=spread, size=(j, 3)), rng.uniform(*var_range, j))


def random_rigid(rng, translation=1.0):
    return RigidTransform(random_rotation(rng), rng.uniform(-translation, translation, 3))


@pytest.fixture
def rng():
    return make_rng(12345)
