"""
Tests of sobolev_descent.features: random Fourier features and their
Jacobians.
"""

import numpy as np
from hypothesis import given, settings
from hypothesis.strategies import floats, integers, lists
from numpy.testing import assert_allclose, assert_array_equal
from pytest import raises

from sobolev_descent.errors import ParameterError
from sobolev_descent.features import (
    FeatureMap,
    gaussian_kernel,
    gradient_field,
    jacobian,
    jacobian_batch,
    phi,
    phi_batch,
    sample_feature_map,
)


def test_sample_feature_map_is_deterministic():
    a = sample_feature_map(2, 100, 0.1, seed=7)
    b = sample_feature_map(2, 100, 0.1, seed=7)

    assert a.W.shape == (100, 2)
    assert_array_equal(a.W, b.W)
    assert_array_equal(a.b, b.b)


def test_streams_and_seeds_give_different_features():
    a = sample_feature_map(2, 10, 1.0, seed=7)
    assert not np.array_equal(a.W, sample_feature_map(2, 10, 1.0, seed=8).W)
    assert not np.array_equal(
        a.W, sample_feature_map(2, 10, 1.0, seed=7, purpose="eval_features").W)


def test_single_feature_shape():
    fm = sample_feature_map(1, 1, 1.0, seed=0)
    assert fm.W.shape == (1, 1)
    assert fm.b.shape == (1,)
    assert 0 <= fm.b[0] < 2 * np.pi


def test_frequency_std_is_inverse_bandwidth():
    fm = sample_feature_map(1, 100_000, 0.5, seed=3)
    assert abs(np.std(fm.W) - 2.0) < 0.04


def test_scale_convention():
    assert sample_feature_map(3, 50, 1.0, 0).scale == np.sqrt(2.0 / 50)
    assert sample_feature_map(3, 50, 1.0, 0, normalize=False).scale == 1.0


def test_invalid_parameters():
    with raises(ParameterError):
        sample_feature_map(0, 10, 1.0, 0)
    with raises(ParameterError):
        sample_feature_map(2, 0, 1.0, 0)
    with raises(ParameterError):
        sample_feature_map(2, 10, 0.0, 0)
    with raises(ParameterError):
        sample_feature_map(2, 10, 1.0, -1)


def test_feature_map_is_read_only():
    fm = sample_feature_map(2, 4, 1.0, 0)
    with raises(ValueError):
        fm.W[0, 0] = 1.0


def test_phi_at_zero():
    fm = sample_feature_map(3, 20, 1.0, 0)
    assert_allclose(phi(fm, np.zeros(3)), fm.scale * np.cos(fm.b), rtol=0, atol=1e-15)


def test_phi_dimension_mismatch():
    fm = sample_feature_map(3, 20, 1.0, 0)
    with raises(ParameterError):
        phi(fm, np.zeros(2))
    with raises(ParameterError):
        jacobian(fm, np.zeros(4))


@given(lists(floats(-1e3, 1e3), min_size=2, max_size=2))
@settings(max_examples=50, deadline=None)
def test_phi_is_bounded(x):
    fm = sample_feature_map(2, 64, 0.3, 11)
    values = phi(fm, np.array(x))
    assert np.all(np.abs(values) <= fm.scale)
    assert np.linalg.norm(values) <= fm.scale * np.sqrt(64) + 1e-12


def test_phi_batch_matches_phi(rng):
    fm = sample_feature_map(3, 16, 0.7, 2)
    X = rng.standard_normal((5, 3))
    batch = phi_batch(fm, X)
    for i in range(5):
        assert_array_equal(batch[i], phi(fm, X[i]))


def test_features_approximate_gaussian_kernel():
    x = np.array([0.3, -0.1])
    y = np.array([-0.2, 0.4])
    estimates = [np.dot(phi(fm, x), phi(fm, y))
                 for fm in (sample_feature_map(2, 10_000, 1.0, seed) for seed in range(5))]
    assert abs(np.mean(estimates) - gaussian_kernel(x, y, 1.0)) < 0.02


def test_zero_frequency_jacobian():
    fm = FeatureMap(W=[[0.0]], b=[0.3], sigma=1.0, scale=1.0)
    assert_array_equal(jacobian(fm, np.array([2.0])), np.zeros((1, 1)))


@given(integers(1, 3), integers(1, 32), integers(0, 2**32))
@settings(max_examples=30, deadline=None)
def test_jacobian_matches_finite_differences(d, m, seed):
    fm = sample_feature_map(d, m, 0.8, seed)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(d)
    direction = rng.standard_normal(d)
    h = 1e-6

    fd = (phi(fm, x + h * direction) - phi(fm, x - h * direction)) / (2 * h)
    analytic = jacobian(fm, x).T @ direction
    assert np.max(np.abs(fd - analytic)) / (1 + np.max(np.abs(phi(fm, x)))) < 1e-5


def test_jacobian_columns_match_finite_differences(rng):
    fm = sample_feature_map(2, 8, 1.0, 4)
    x = rng.standard_normal(2)
    J = jacobian(fm, x)
    h = 1e-6
    for a in range(2):
        e = np.zeros(2)
        e[a] = h
        fd = (phi(fm, x + e) - phi(fm, x - e)) / (2 * h)
        assert_allclose(J[a], fd, rtol=1e-6, atol=1e-9)


def test_gradient_field_matches_jacobian(rng):
    fm = sample_feature_map(3, 12, 0.5, 9)
    X = rng.standard_normal((6, 3))
    u = rng.standard_normal(12)

    grads = gradient_field(fm, u, X)
    Js = jacobian_batch(fm, X)
    for i in range(6):
        assert_allclose(grads[i], jacobian(fm, X[i]) @ u, rtol=1e-12, atol=1e-14)
        assert_allclose(Js[i], jacobian(fm, X[i]), rtol=1e-12, atol=1e-14)


def test_gradient_of_scalar_critic(rng):
    fm = sample_feature_map(2, 30, 0.6, 5)
    u = rng.standard_normal(30)
    x = rng.standard_normal(2)
    h = 1e-6
    fd = [(np.dot(u, phi(fm, x + h * e)) - np.dot(u, phi(fm, x - h * e))) / (2 * h)
          for e in np.eye(2)]
    assert_allclose(gradient_field(fm, u, x)[0], fd, rtol=1e-6, atol=1e-8)


def test_gradient_field_coefficients_length():
    fm = sample_feature_map(2, 30, 0.6, 5)
    with raises(ParameterError):
        gradient_field(fm, np.ones(29), np.zeros((1, 2)))


def test_gaussian_kernel_values():
    assert gaussian_kernel([1.0, 2.0], [1.0, 2.0], 0.5) == 1.0
    assert_allclose(gaussian_kernel([0.0], [1.0], 1.0), np.exp(-0.5))
