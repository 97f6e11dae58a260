"""
Tests of sobolev_descent.embeddings.
"""

import numpy as np
from hypothesis import given, settings
from hypothesis.strategies import integers
from numpy.testing import assert_allclose, assert_array_equal
from pytest import raises

from conftest import random_cloud
from sobolev_descent.embeddings import (
    ParticleSet,
    bandwidth_sweep,
    block_reduce,
    kdge,
    kme,
    mmd2,
    mmd2_particles,
    tree_sum,
)
from sobolev_descent.errors import ParameterError
from sobolev_descent.features import jacobian, phi, sample_feature_map


def test_particle_set_promotes_1d_input():
    ps = ParticleSet([0.1, 0.2, 0.3])
    assert ps.points.shape == (3, 1)
    assert ps.n == 3 and ps.d == 1 and len(ps) == 3


def test_particle_set_rejects_bad_points():
    with raises(ParameterError):
        ParticleSet(np.zeros((0, 2)))
    with raises(ParameterError):
        ParticleSet([[0.0, np.nan]])
    with raises(ParameterError):
        ParticleSet([[0.0, np.inf]])


def test_kme_of_single_particle():
    fm = sample_feature_map(2, 16, 0.5, 0)
    x = np.array([0.3, -0.7])
    assert_allclose(kme(fm, ParticleSet(x[None, :])).mu, phi(fm, x), rtol=0, atol=1e-15)


def test_kme_invariant_to_duplication(rng):
    fm = sample_feature_map(3, 16, 0.5, 0)
    ps = random_cloud(rng, 20, 3)
    doubled = ParticleSet(np.vstack([ps.points, ps.points]))
    assert_allclose(kme(fm, doubled).mu, kme(fm, ps).mu, rtol=1e-13, atol=1e-15)


def test_kme_of_standard_normal_cloud(rng):
    fm = sample_feature_map(1, 8, 1.0, 1)
    ps = ParticleSet(rng.standard_normal(10_000))
    expected = fm.scale * np.cos(fm.b) * np.exp(-fm.W[:, 0]**2 / 2)
    assert np.max(np.abs(kme(fm, ps).mu - expected)) < 4 * fm.scale / np.sqrt(10_000)


def test_kme_dimension_mismatch(rng):
    fm = sample_feature_map(3, 16, 0.5, 0)
    with raises(ParameterError):
        kme(fm, random_cloud(rng, 5, 2))
    with raises(ParameterError):
        kdge(fm, random_cloud(rng, 5, 2))


def test_kdge_matches_double_loop_oracle(rng):
    fm = sample_feature_map(2, 4, 0.7, 3)
    ps = random_cloud(rng, 5, 2)
    oracle = np.zeros((4, 4))
    for x in ps.points:
        J = jacobian(fm, x)
        for j in range(4):
            for k in range(4):
                oracle[j, k] += sum(J[a, j] * J[a, k] for a in range(2)) / 5
    assert_allclose(kdge(fm, ps).D, oracle, rtol=1e-12, atol=1e-14)


def test_kdge_of_single_particle_has_rank_d():
    fm = sample_feature_map(2, 10, 0.7, 3)
    D = kdge(fm, ParticleSet([[0.1, 0.2]])).D
    assert np.linalg.matrix_rank(D, tol=1e-10) <= 2


@given(integers(1, 3), integers(1, 40), integers(1, 32), integers(0, 2**32))
@settings(max_examples=40, deadline=None)
def test_kdge_is_symmetric_psd(d, n, m, seed):
    rng = np.random.default_rng(seed)
    fm = sample_feature_map(d, m, 0.5, seed)
    D = kdge(fm, random_cloud(rng, n, d)).D

    assert_array_equal(D, D.T)
    norm = np.linalg.norm(D)
    assert np.min(np.linalg.eigvalsh(D)) >= -1e-10 * max(norm, 1e-300)
    for v in rng.standard_normal((10, m)):
        assert v @ D @ v >= -1e-10 * norm * np.dot(v, v)


def test_kdge_feature_cap():
    fm = sample_feature_map(1, 20, 1.0, 0)
    with raises(ParameterError):
        kdge(fm, ParticleSet([0.0]), max_features=10)


def test_embeddings_permutation_invariance(rng):
    fm = sample_feature_map(2, 12, 0.5, 6)
    ps = random_cloud(rng, 50, 2)
    shuffled = ParticleSet(ps.points[rng.permutation(50)])
    assert_allclose(kme(fm, shuffled).mu, kme(fm, ps).mu, rtol=1e-12, atol=1e-14)
    assert_allclose(kdge(fm, shuffled).D, kdge(fm, ps).D, rtol=1e-12, atol=1e-14)


def test_tree_sum_order():
    terms = [np.array([1.0]), np.array([1e16]), np.array([-1e16]), np.array([1.0])]
    # (1 + 1e16) + (-1e16 + 1)
    assert tree_sum(terms)[0] == (1.0 + 1e16) + (-1e16 + 1.0)
    with raises(ParameterError):
        tree_sum([])


def test_block_reduce_matches_plain_sum(rng):
    X = rng.standard_normal((1000, 3))
    total = block_reduce(lambda block: block.sum(axis=0), X, block_size=64)
    assert_allclose(total, X.sum(axis=0), rtol=1e-12)


def test_large_cloud_kme_uses_blocks(rng):
    fm = sample_feature_map(3, 8, 0.5, 6)
    X = rng.random((9000, 3))
    assert_allclose(kme(fm, X).mu, phi_mean(fm, X), rtol=1e-12, atol=1e-15)


def phi_mean(fm, X):
    return np.mean(fm.scale * np.cos(X @ fm.W.T + fm.b), axis=0)


def test_mmd2_properties(rng):
    fm = sample_feature_map(2, 32, 0.5, 0)
    a, b, c = (kme(fm, random_cloud(rng, 10, 2, shift=s)) for s in (0.0, 0.5, 1.0))

    assert mmd2(a, a) == 0.0
    assert mmd2(a, b) == mmd2(b, a)
    assert mmd2(a, b) > 0
    assert np.sqrt(mmd2(a, c)) <= np.sqrt(mmd2(a, b)) + np.sqrt(mmd2(b, c)) + 1e-15


def test_mmd2_of_single_particles():
    fm = sample_feature_map(2, 32, 0.5, 0)
    x, y = np.array([0.1, 0.2]), np.array([-0.3, 0.5])
    direct = np.sum((phi(fm, x) - phi(fm, y))**2)
    assert_allclose(mmd2_particles(fm, ParticleSet(x[None]), ParticleSet(y[None])),
                    direct, rtol=1e-12)


def test_mmd2_length_mismatch():
    with raises(ParameterError):
        mmd2(np.zeros(3), np.zeros(4))


def test_bandwidth_sweep(rng):
    p = random_cloud(rng, 50, 2)
    q = random_cloud(rng, 50, 2, shift=1.0)
    sweep = bandwidth_sweep(p, q, [0.1, 1.0, 10.0], m=100, seed=0)

    assert [s for s, _ in sweep] == [0.1, 1.0, 10.0]
    assert all(v >= 0 for _, v in sweep)
    assert sweep == bandwidth_sweep(p, q, [0.1, 1.0, 10.0], m=100, seed=0)
