#!/usr/bin/env python3
"""
Test Matting Agent
Dual-layer Laplacian against a per-window least-squares oracle, positive
definiteness, the confidence diagonal and the regularized solve
"""

import os
import sys

import numpy as np
import pytest

# Add project root to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from consensus import check_firm_nonexpansiveness
from errors import ImageError, ParameterError
from matting_agent import (MattingAgent, build_dual_laplacian, confidence_from_input, matting_agent_eval,
                           window_indices)
from sparse_linalg import min_eigenvalue_estimate


def random_pair(rng, h, w):
    return rng.random((h, w, 3)), rng.random((h, w, 3))


def window_cost(colors, plate_colors, alpha, eta, eps):
    """min over (a, b) of ||H a + b - alpha||^2 + eta ||G a + b||^2 + eps ||a||^2 by lstsq"""
    m = len(alpha)
    design = np.vstack([
        np.hstack([colors, np.ones((m, 1))]),
        np.sqrt(eta) * np.hstack([plate_colors, np.ones((m, 1))]),
        np.hstack([np.sqrt(eps) * np.eye(3), np.zeros((3, 1))]),
    ])
    target = np.concatenate([alpha, np.zeros(m + 3)])
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    return float(((design @ coef - target) ** 2).sum())


def oracle_energy(image, plate, alpha, eta, eps):
    h, w, _ = image.shape
    flat_i = image.reshape(-1, 3)
    flat_p = plate.reshape(-1, 3)
    flat_a = alpha.ravel()
    return sum(window_cost(flat_i[idx], flat_p[idx], flat_a[idx], eta, eps) for idx in window_indices(h, w))


def dense_agent(lap, z, lambda1, kappa=30.0, theta=0.8):
    d = confidence_from_input(z, kappa, theta).diag.entries
    return np.linalg.solve(lap.matrix.to_dense() + lambda1 * np.diag(d), lambda1 * d * z.ravel())


def test_window_indices_cover_interior_windows():
    inds = window_indices(4, 5)
    assert inds.shape == (2 * 3, 9)
    np.testing.assert_array_equal(inds[0], [0, 1, 2, 5, 6, 7, 10, 11, 12])


def test_zero_alpha_has_zero_energy():
    rng = np.random.default_rng(0)
    lap = build_dual_laplacian(*random_pair(rng, 5, 5))
    assert lap.matrix.quadratic_form(np.zeros(25)) == 0.0


def test_single_window_all_ones_matches_least_squares():
    rng = np.random.default_rng(1)
    image, plate = random_pair(rng, 3, 3)
    alpha = np.ones((3, 3))
    lap = build_dual_laplacian(image, plate, eta=1.0, eps=1e-7)
    expected = window_cost(image.reshape(-1, 3), plate.reshape(-1, 3), alpha.ravel(), 1.0, 1e-7)
    assert lap.matrix.quadratic_form(alpha) == pytest.approx(expected, rel=1e-8)


@pytest.mark.parametrize('eta', [0.5, 1.0, 2.0])
def test_energy_matches_window_least_squares(eta):
    rng = np.random.default_rng(int(eta * 10))
    for trial in range(8):
        h, w = rng.integers(3, 11, size=2)
        image, plate = random_pair(rng, h, w)
        alpha = rng.random((h, w))
        lap = build_dual_laplacian(image, plate, eta=eta, eps=1e-7)
        expected = oracle_energy(image, plate, alpha, eta, 1e-7)
        assert lap.matrix.quadratic_form(alpha) == pytest.approx(expected, rel=1e-8)


def test_laplacian_is_positive_definite():
    rng = np.random.default_rng(2)
    for _ in range(20):
        lap = build_dual_laplacian(*random_pair(rng, 8, 8), eta=1.0, eps=1e-7)
        assert min_eigenvalue_estimate(lap.matrix) > 0


def test_window_statistics_symmetric_under_layer_swap():
    rng = np.random.default_rng(3)
    image, plate = random_pair(rng, 6, 7)
    forward = build_dual_laplacian(image, plate, eta=1.0)
    swapped = build_dual_laplacian(plate, image, eta=1.0)
    np.testing.assert_allclose(forward.window_mu, swapped.window_mu, atol=1e-12)
    np.testing.assert_allclose(forward.window_sigma, swapped.window_sigma, atol=1e-12)
    np.testing.assert_allclose(forward.window_t, swapped.window_t, atol=1e-12)


def test_laplacian_input_validation():
    rng = np.random.default_rng(4)
    image, plate = random_pair(rng, 2, 5)
    with pytest.raises(ImageError):
        build_dual_laplacian(image, plate)
    image, plate = random_pair(rng, 5, 5)
    image[2, 2, 1] = np.nan
    with pytest.raises(ImageError):
        build_dual_laplacian(image, plate)
    with pytest.raises(ImageError):
        build_dual_laplacian(image[:, :4], plate)
    with pytest.raises(ParameterError):
        build_dual_laplacian(plate, plate, eta=0.0)


def test_confidence_values():
    conf = confidence_from_input(np.array([0.8, 1.0]), kappa=30, theta=0.8)
    assert conf.diag.entries[0] == pytest.approx(0.5)
    assert conf.diag.entries[1] == pytest.approx(1.0 / (1.0 + np.exp(-6.0)))

    hard = confidence_from_input(np.array([0.9, 0.7]), kappa=1e6, theta=0.8)
    assert hard.diag.entries[0] == pytest.approx(1.0)
    assert hard.diag.entries[1] == pytest.approx(0.0, abs=1e-12)

    with pytest.raises(ParameterError):
        confidence_from_input(np.zeros(2), theta=1.0)


def test_zero_input_gives_exactly_zero():
    rng = np.random.default_rng(5)
    lap = build_dual_laplacian(*random_pair(rng, 6, 6))
    out = matting_agent_eval(np.zeros(36), lap)
    np.testing.assert_array_equal(out, np.zeros(36))


def test_large_lambda_follows_input():
    rng = np.random.default_rng(6)
    lap = build_dual_laplacian(*random_pair(rng, 5, 5))
    z = rng.uniform(0.8, 1.0, size=25)
    out = matting_agent_eval(z, lap, lambda1=1e6, cg_tol=1e-12)
    assert np.max(np.abs(out - z)) <= 1e-2
    np.testing.assert_allclose(out, dense_agent(lap, z, 1e6), atol=1e-8)


def test_agent_matches_dense_solve():
    rng = np.random.default_rng(7)
    lap = build_dual_laplacian(*random_pair(rng, 8, 8))
    z = rng.random(64)
    out = matting_agent_eval(z, lap, lambda1=0.01, cg_tol=1e-12, cg_max_iter=5000)
    expected = dense_agent(lap, z, 0.01)
    assert np.linalg.norm(out - expected) <= 1e-6 * np.linalg.norm(expected)


def test_agent_rejects_bad_input():
    rng = np.random.default_rng(8)
    lap = build_dual_laplacian(*random_pair(rng, 4, 4))
    with pytest.raises(ParameterError):
        matting_agent_eval(np.zeros(10), lap)
    with pytest.raises(ParameterError):
        matting_agent_eval(np.full(16, np.inf), lap)
    with pytest.raises(ParameterError):
        matting_agent_eval(np.zeros(16), lap, lambda1=0.0)


def test_frozen_confidence_agent_is_firmly_nonexpansive():
    rng = np.random.default_rng(9)
    image, plate = random_pair(rng, 16, 16)
    agent = MattingAgent(build_dual_laplacian(image, plate), lambda1=0.01, kappa=30, theta=0.8,
                         cg_tol=1e-12, cg_max_iter=5000)
    agent.freeze_confidence(np.ones(256))
    slack = check_firm_nonexpansiveness(agent.as_agent(), lambda: rng.random(256), trials=500)
    assert slack <= 1e-8
