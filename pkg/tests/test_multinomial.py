"""Tests for the multinomial / cross-entropy model."""
import math
import unittest

import numpy as np
import pytest

from util.compdata import validate_composition
from util.errors import DimensionMismatch, InputError, NonPositiveProbability
from util.multinomial import (
    TrialCounts,
    ce_loss,
    fit_multinomial,
    grad_ce_beta,
    grad_ce_rho,
    link_p,
    multinomial_loglik,
)
from util.optim import FitConfig
from util.simulate import sample_multinomial_proportions
from util.spatialw import build_band_weights, build_knn_weights, lag_derivative_terms, lag_transform

TIGHT = FitConfig(gradient_tolerance=1e-10, objective_rel_tolerance=1e-15)


def _instance(seed: int, n: int = 8, K: int = 2, J: int = 3):
    rng = np.random.default_rng(seed)
    X = np.hstack([np.ones((n, 1)), rng.normal(size=(n, K - 1))])
    Y = validate_composition(rng.dirichlet(np.full(J, 1.5), size=n))
    beta = np.hstack([np.zeros((K, 1)), rng.normal(scale=0.5, size=(K, J - 1))])
    return Y, X, beta


def test_ce_loss_hand_values() -> None:
    Y = validate_composition([[0.5, 0.5], [0.5, 0.5]])
    assert ce_loss(Y, Y.values) == pytest.approx(2 * math.log(2.0), abs=1e-10)
    assert ce_loss(np.array([[1.0, 0.0]]), np.array([[0.25, 0.75]])) == pytest.approx(-math.log(0.25), abs=1e-10)
    with pytest.raises(NonPositiveProbability):
        ce_loss(np.array([[0.5, 0.5]]), np.array([[0.0, 1.0]]))


def test_link_p_hand_softmax_and_uniform() -> None:
    np.testing.assert_allclose(link_p(np.array([[1.0]]), np.array([[0.0, math.log(3.0)]])), [[0.25, 0.75]])
    np.testing.assert_allclose(link_p(np.ones((3, 2)), np.zeros((2, 4))), 0.25)


def test_grad_ce_beta_matches_finite_differences() -> None:
    Y, X, beta = _instance(1)
    G = grad_ce_beta(Y, X, link_p(X, beta))
    h = 1e-6
    for p in range(beta.shape[0]):
        for d in range(1, beta.shape[1]):
            up, down = beta.copy(), beta.copy()
            up[p, d] += h
            down[p, d] -= h
            fd = (ce_loss(Y, link_p(X, up)) - ce_loss(Y, link_p(X, down))) / (2 * h)
            assert G[p, d] == pytest.approx(fd, rel=1e-6, abs=1e-8)
    np.testing.assert_array_equal(G[:, 0], 0.0)


def test_grad_ce_beta_zero_at_perfect_fit_and_additive() -> None:
    Y, X, beta = _instance(2)
    np.testing.assert_allclose(grad_ce_beta(Y, X, Y.values), 0.0, atol=1e-15)
    P = link_p(X, beta)
    Y2 = validate_composition(np.vstack([Y.values, Y.values]))
    G2 = grad_ce_beta(Y2, np.vstack([X, X]), np.vstack([P, P]))
    np.testing.assert_allclose(G2, 2 * grad_ce_beta(Y, X, P), atol=1e-12)


def test_grad_ce_rho_matches_finite_difference() -> None:
    Y, X, beta = _instance(3)
    W = build_band_weights(Y.n, 2)
    rho = 0.35

    def loss(r: float) -> float:
        return ce_loss(Y, link_p(lag_transform(W, r, X), beta))

    U, _, _ = lag_derivative_terms(W, rho, X, beta)
    analytic = grad_ce_rho(Y, link_p(lag_transform(W, rho, X), beta), U)
    fd = (loss(rho + 1e-6) - loss(rho - 1e-6)) / 2e-6
    assert analytic == pytest.approx(fd, rel=1e-6, abs=1e-8)


def test_grad_ce_rho_vanishes_without_signal() -> None:
    Y, X, beta = _instance(4)
    W = build_band_weights(Y.n, 1)
    U0, _, _ = lag_derivative_terms(W, 0.2, X, np.zeros_like(beta))
    assert grad_ce_rho(Y, link_p(X, beta), U0) == 0.0


def test_multinomial_loglik_equals_scaled_cross_entropy() -> None:
    rng = np.random.default_rng(9)
    Y, X, _ = _instance(9, n=12)
    m = 37
    counts = TrialCounts(np.full(Y.n, m))
    for _ in range(100):
        beta = np.hstack([np.zeros((2, 1)), rng.normal(size=(2, 2))])
        P = link_p(X, beta)
        assert multinomial_loglik(Y, counts, P) == pytest.approx(-m * ce_loss(Y, P), rel=1e-12, abs=1e-12)


def test_multinomial_loglik_hand_value_and_grid_maximum() -> None:
    half = validate_composition([[0.5, 0.5]])
    assert multinomial_loglik(half, TrialCounts([2]), np.array([[0.5, 0.5]])) == pytest.approx(-2 * math.log(2.0))

    y = validate_composition([[0.3, 0.7]])
    grid = np.linspace(0.01, 0.99, 99)
    values = [multinomial_loglik(y, TrialCounts([10]), np.array([[p, 1 - p]])) for p in grid]
    assert grid[int(np.argmax(values))] == pytest.approx(0.3)


class TestTrialCounts(unittest.TestCase):
    def test_rejects_non_integers_and_zero(self) -> None:
        with self.assertRaises(InputError):
            TrialCounts([1.5, 2])
        with self.assertRaises(InputError):
            TrialCounts([0, 2])

    def test_row_mismatch(self) -> None:
        with self.assertRaises(DimensionMismatch):
            multinomial_loglik(validate_composition([[0.5, 0.5]]), TrialCounts([1, 2]), np.array([[0.5, 0.5]]))


class TestFitMultinomial(unittest.TestCase):
    def setUp(self) -> None:
        rng = np.random.default_rng(17)
        n = 150
        self.X = np.hstack([np.ones((n, 1)), rng.normal(size=(n, 1))])
        beta = np.array([[0.0, 0.4, -0.3], [0.0, 1.2, -0.8]])
        P = link_p(self.X, beta)
        self.Y = validate_composition(sample_multinomial_proportions(np.full(n, 50), P, rng))
        self.beta = beta

    def test_equal_counts_match_plain_cross_entropy(self) -> None:
        plain = fit_multinomial(self.Y, self.X, config=TIGHT)
        weighted = fit_multinomial(self.Y, self.X, counts=TrialCounts(np.full(self.Y.n, 50)), config=TIGHT)
        np.testing.assert_allclose(weighted.params.beta, plain.params.beta, atol=1e-6)
        self.assertEqual(plain.notes["objective"], "negative_cross_entropy")
        self.assertEqual(weighted.notes["objective"], "count_weighted_loglik")

    def test_recovers_beta(self) -> None:
        result = fit_multinomial(self.Y, self.X, config=TIGHT)
        self.assertTrue(result.converged)
        self.assertIsNone(result.params.gamma)
        np.testing.assert_allclose(result.params.beta, self.beta, atol=0.2)
        self.assertEqual(result.notes["covariance_source"], "finite_difference")
        self.assertEqual(result.std_errors.shape, (4,))

    def test_spatial_fit_has_rho(self) -> None:
        W = build_band_weights(self.Y.n, 2)
        result = fit_multinomial(self.Y, self.X, W, config=FitConfig(compute_covariance=False))
        self.assertIsNotNone(result.params.rho)
        self.assertEqual(result.parameter_names[-1], "rho")


def test_saturated_single_observation() -> None:
    y = validate_composition([[0.2, 0.3, 0.5]])
    result = fit_multinomial(y, np.ones((1, 1)), config=TIGHT)
    P = link_p(np.ones((1, 1)), result.params.beta)
    np.testing.assert_allclose(P, y.values, atol=1e-6)
    entropy = -float(np.sum(y.values * np.log(y.values)))
    assert ce_loss(y, P) == pytest.approx(entropy, abs=1e-6)


@pytest.mark.parametrize("rho", [0.5, 0.9])
@pytest.mark.parametrize("seed", [3, 4])
def test_spatial_fit_on_row_normalized_knn_weights(rho: float, seed: int) -> None:
    rng = np.random.default_rng(seed)
    n = 200
    W = build_knn_weights(rng.uniform(size=(n, 2)), 5)
    X = np.hstack([np.ones((n, 1)), rng.normal(size=(n, 2))])
    beta = np.array([[0.0, 0.1, -0.1], [0.0, 1.0, -2.0], [0.0, -1.0, -2.0]])
    P = link_p(lag_transform(W, rho, X), beta)
    Y = validate_composition(sample_multinomial_proportions(np.full(n, 200), P, rng))
    result = fit_multinomial(Y, X, W, config=FitConfig(compute_covariance=False))
    assert -1.0 <= result.params.rho < 1.0
    assert abs(result.params.rho - rho) < 0.15
