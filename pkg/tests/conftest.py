import numpy as np
import pytest

from sobolev_descent.embeddings import ParticleSet


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_cloud(rng, n, d, scale=1.0, shift=0.0):
    return ParticleSet(shift + scale * rng.standard_normal((n, d)))


def random_psd(rng, m, rank=None):
    rank = m if rank is None else rank
    A = rng.standard_normal((m, rank))
    return A @ A.T / m
