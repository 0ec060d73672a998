from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from asyncpca import (
    NonDescendingSpectrum,
    NotOrthogonal,
    TypeMismatch,
    build_spectral_model,
    draw_coordinates,
    sample_data,
    seed_stream,
)
from conftest import LAM


def rotation_2d_in_4d(angle: float) -> np.ndarray:
    q = np.eye(4)
    c, s = math.cos(angle), math.sin(angle)
    q[0, 0] = c; q[0, 1] = -s
    q[1, 0] = s; q[1, 1] = c
    return q


def test_sign_sampler_moments_by_enumeration(model):
    """All 2^4 sign vectors: covariance, fourth moments, and norm are exact."""
    lam = np.array(LAM)
    sqrt_lam = np.sqrt(lam)
    cov = np.zeros((4, 4))
    fourth = np.zeros((4, 4))
    for signs in itertools.product((-1.0, 1.0), repeat=4):
        y = sqrt_lam * np.array(signs)
        cov += np.outer(y, y)
        fourth += np.outer(y ** 2, y ** 2)
        assert np.linalg.norm(y) == pytest.approx(math.sqrt(lam.sum()), abs=1e-14)
    cov /= 16.0
    fourth /= 16.0
    assert np.allclose(cov, np.diag(lam), atol=1e-12)
    assert np.allclose(np.sqrt(fourth), model.fourth_moments, atol=1e-12)
    assert model.data_bound == pytest.approx(math.sqrt(10.0), abs=1e-15)
    assert model.phi == pytest.approx(lam[0] * lam.sum(), abs=1e-12)
    assert model.eigengap == 1.0
    assert model.alpha(1, 2) == pytest.approx(math.sqrt(12.0), abs=1e-15)


def test_sign_sampler_monte_carlo_cross_check(model):
    rng = seed_stream(123, 0)
    z = draw_coordinates(model, rng, 200_000)
    assert set(np.unique(z)) == {-1.0, 1.0}
    y = model.sqrt_eigenvalues * z
    emp_cov = y.T @ y / z.shape[0]
    assert np.allclose(emp_cov, np.diag(LAM), atol=0.05)


def test_block_draw_matches_sequential_draws(model):
    block = draw_coordinates(model, seed_stream(7, 1), 64)
    rng = seed_stream(7, 1)
    singles = np.stack([draw_coordinates(model, rng) for _ in range(64)])
    assert np.array_equal(block, singles)


def test_seed_stream_is_path_keyed():
    a = seed_stream(5, 1, 2).standard_normal(8)
    b = seed_stream(5, 1, 2).standard_normal(8)
    c = seed_stream(5, 2, 1).standard_normal(8)
    d = seed_stream(6, 1, 2).standard_normal(8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_truncated_sampler_bound_and_moments():
    model = build_spectral_model(LAM, sampler="truncated_gaussian", trunc_radius=3.0)
    rng = seed_stream(0, 3)
    z = draw_coordinates(model, rng, 100_000)
    x = model.sqrt_eigenvalues * z
    norms = np.linalg.norm(x, axis=1)
    assert norms.max() <= model.data_bound + 1e-12
    # Coordinates are rescaled to unit variance after truncation.
    assert np.allclose(z.std(axis=0), 1.0, atol=0.02)
    # Independent unit-variance coordinates: off-diagonal fourth moments are
    # sqrt(lam_i lam_j); the diagonal carries the common kurtosis factor,
    # which truncation pulls below the Gaussian value of 3.
    assert model.alpha(1, 2) == pytest.approx(math.sqrt(12.0), rel=0.05)
    kurt = np.diag(model.fourth_moments) / np.array(LAM)
    assert np.allclose(kurt, kurt[0], rtol=0.05)
    assert 1.0 < kurt[0] ** 2 < 3.0


def test_truncation_scale_against_quadrature_oracle():
    from scipy.stats import truncnorm
    model = build_spectral_model(LAM, sampler="truncated_gaussian", trunc_radius=2.5)
    assert model.trunc_scale == pytest.approx(truncnorm.std(-2.5, 2.5), abs=1e-12)


def test_rotation_round_trip_covariance():
    q = rotation_2d_in_4d(0.7)
    model = build_spectral_model(LAM, rotation=q)
    assert not model.identity_rotation
    rng = seed_stream(11, 0)
    x = np.stack([sample_data(model, rng) for _ in range(20_000)])
    emp = x.T @ x / x.shape[0]
    target = q @ np.diag(LAM) @ q.T
    assert np.allclose(emp, target, atol=0.1)


def test_spectrum_validation_errors():
    with pytest.raises(NonDescendingSpectrum):
        build_spectral_model([3.0, 4.0, 2.0, 1.0])
    with pytest.raises(NonDescendingSpectrum):
        build_spectral_model([4.0, 4.0, 2.0, 1.0])
    with pytest.raises(NonDescendingSpectrum):
        build_spectral_model([4.0, -1.0])
    with pytest.raises(NonDescendingSpectrum):
        build_spectral_model([4.0])
    with pytest.raises(NonDescendingSpectrum):
        build_spectral_model([4.0, 3.0, 2.0, 2.5])


def test_rotation_validation_errors():
    bad = np.eye(4)
    bad[0, 1] = 1e-6
    with pytest.raises(NotOrthogonal):
        build_spectral_model(LAM, rotation=bad)
    with pytest.raises(NotOrthogonal):
        build_spectral_model(LAM, rotation=np.eye(3))


def test_sampler_validation_errors():
    with pytest.raises(TypeMismatch):
        build_spectral_model(LAM, sampler="gaussian")
    with pytest.raises(TypeMismatch):
        build_spectral_model(LAM, sampler="truncated_gaussian", trunc_radius=-1.0)
