"""Tests for spatial weight builders and the lag algebra."""
import logging
import unittest

import numpy as np
import pytest

from util.errors import (
    DuplicatePoints,
    InvalidCutoff,
    InvalidK,
    IsolatedPoint,
    NegativeWeight,
    NonSquare,
    NonzeroDiagonal,
    RhoOutOfBounds,
    SingularLag,
    ZeroDistance,
)
from util.spatialw import (
    SpatialWeights,
    build_band_weights,
    build_inverse_distance_weights,
    build_knn_weights,
    lag_derivative_terms,
    lag_transform,
    row_normalize,
)

SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])


class TestSpatialWeights(unittest.TestCase):
    def test_non_square(self) -> None:
        with self.assertRaises(NonSquare):
            SpatialWeights(np.zeros((2, 3)))

    def test_negative_weight(self) -> None:
        with self.assertRaises(NegativeWeight) as ctx:
            SpatialWeights(np.array([[0.0, -1.0], [1.0, 0.0]]))
        self.assertEqual((ctx.exception.i, ctx.exception.j), (0, 1))

    def test_nonzero_diagonal(self) -> None:
        with self.assertRaises(NonzeroDiagonal):
            SpatialWeights(np.array([[0.1, 1.0], [1.0, 0.0]]))

    def test_subset_and_describe(self) -> None:
        W = build_band_weights(4, 1)
        sub = W.subset(np.array([0, 1, 2]))
        self.assertEqual(sub.n, 3)
        self.assertEqual(W.describe()["construction"], "band")


def test_band_weights_hand_example() -> None:
    W = build_band_weights(4, 1)
    expected = [[0, 1, 0, 0], [1, 0, 1, 0], [0, 1, 0, 1], [0, 0, 1, 0]]
    np.testing.assert_array_equal(W.weights, expected)
    assert not W.row_normalized


def test_band_weights_half_width_two() -> None:
    W = build_band_weights(3, 2)
    np.testing.assert_allclose(W.weights[0], [0, 0.5, 0.5])
    np.testing.assert_allclose(W.weights[1], [0.5, 0, 0.5])


def test_band_weights_k_must_be_below_n() -> None:
    with pytest.raises(InvalidK):
        build_band_weights(5, 5)


def test_knn_collinear_neighbour() -> None:
    W = build_knn_weights(np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [10.0, 0.0]]), 1)
    assert W.weights[2, 1] == 1.0
    assert W.weights[2].sum() == 1.0


def test_knn_two_points() -> None:
    W = build_knn_weights(np.array([[0.0, 0.0], [3.0, 4.0]]), 1)
    np.testing.assert_array_equal(W.weights, SWAP)


def test_knn_ties_go_to_lower_index() -> None:
    # point 1 is equidistant from points 0 and 2
    W = build_knn_weights(np.array([0.0, 1.0, 2.0]), 1)
    assert W.weights[1, 0] == 1.0
    assert W.weights[1, 2] == 0.0


def test_knn_accepts_one_dimensional_coordinates() -> None:
    W = build_knn_weights(np.array([0.0, 0.5, 3.0, 3.2]), 2)
    np.testing.assert_allclose(W.weights.sum(axis=1), 1.0)


def test_knn_rejects_duplicates_and_bad_k() -> None:
    with pytest.raises(DuplicatePoints):
        build_knn_weights(np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]]), 1)
    with pytest.raises(InvalidK):
        build_knn_weights(np.array([[0.0, 0.0], [1.0, 1.0]]), 2)


def test_inverse_distance_hand_example() -> None:
    W = build_inverse_distance_weights(np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]]), 2.0)
    np.testing.assert_allclose(W.weights[0], [0, 1, 0])
    np.testing.assert_allclose(W.weights[1], [2 / 3, 0, 1 / 3])
    assert W.row_normalized


def test_inverse_distance_errors() -> None:
    with pytest.raises(IsolatedPoint) as exc:
        build_inverse_distance_weights(np.array([[0.0, 0.0], [5.0, 0.0]]), 1.0)
    assert exc.value.index == 0
    with pytest.raises(ZeroDistance):
        build_inverse_distance_weights(np.array([[0.0, 0.0], [0.0, 0.0]]), 1.0)
    with pytest.raises(InvalidCutoff):
        build_inverse_distance_weights(np.array([[0.0, 0.0], [1.0, 0.0]]), 0.0)


def test_row_normalize_hand_example() -> None:
    W = row_normalize(SpatialWeights(np.array([[0, 2, 2], [1, 0, 0], [0, 3, 0]], dtype=float)))
    np.testing.assert_allclose(W.weights, [[0, 0.5, 0.5], [1, 0, 0], [0, 1, 0]])


def test_row_normalize_is_idempotent() -> None:
    W = build_knn_weights(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]]), 2)
    np.testing.assert_allclose(row_normalize(W).weights, W.weights, atol=1e-15)


def test_row_normalize_flags_zero_rows(caplog: pytest.LogCaptureFixture) -> None:
    with caplog.at_level(logging.WARNING):
        W = row_normalize(SpatialWeights(np.array([[0, 1, 0], [0, 0, 0], [1, 1, 0]], dtype=float)))
    assert W.zero_rows == (1,)
    np.testing.assert_array_equal(W.weights[1], 0.0)
    assert "all-zero" in caplog.text


def test_lag_transform_identity_at_rho_zero() -> None:
    A = np.arange(6.0).reshape(3, 2)
    W = build_band_weights(3, 1)
    np.testing.assert_array_equal(lag_transform(W, 0.0, A), A)


def test_lag_transform_hand_example() -> None:
    out = lag_transform(SpatialWeights(SWAP), 0.5, np.array([[1.0], [0.0]]))
    np.testing.assert_allclose(out, [[4 / 3], [2 / 3]], atol=1e-14)


def test_lag_transform_singular() -> None:
    with pytest.raises(SingularLag):
        lag_transform(SpatialWeights(SWAP), 1.0, np.ones((2, 1)))


def test_lag_rejects_rho_outside_box() -> None:
    with pytest.raises(RhoOutOfBounds):
        SpatialWeights(SWAP).lag(1.5)


class TestLagDerivativeTerms(unittest.TestCase):
    def setUp(self) -> None:
        rng = np.random.default_rng(11)
        raw = rng.uniform(0.0, 1.0, (3, 3))
        np.fill_diagonal(raw, 0.0)
        self.W = row_normalize(SpatialWeights(raw))
        self.X = np.hstack([np.ones((3, 1)), rng.normal(size=(3, 1))])
        self.beta = np.hstack([np.zeros((2, 1)), rng.normal(size=(2, 2))])

    def test_rho_zero_reduces(self) -> None:
        U, V, Q = lag_derivative_terms(self.W, 0.0, self.X, self.beta)
        Wm = self.W.weights
        np.testing.assert_allclose(U, Wm @ self.X @ self.beta, atol=1e-14)
        np.testing.assert_allclose(Q, Wm @ self.X, atol=1e-14)
        np.testing.assert_allclose(V, Wm @ U, atol=1e-14)

    def test_zero_beta(self) -> None:
        U, V, _ = lag_derivative_terms(self.W, 0.4, self.X, np.zeros((2, 3)))
        np.testing.assert_array_equal(U, 0.0)
        np.testing.assert_array_equal(V, 0.0)

    def test_matches_dense_inverse(self) -> None:
        rho = 0.6
        Minv = np.linalg.inv(np.eye(3) - rho * self.W.weights)
        Wm = self.W.weights
        U, V, Q = lag_derivative_terms(self.W, rho, self.X, self.beta)
        np.testing.assert_allclose(Q, Minv @ Wm @ Minv @ self.X, atol=1e-10)
        np.testing.assert_allclose(U, Minv @ Wm @ Minv @ self.X @ self.beta, atol=1e-10)
        np.testing.assert_allclose(V, Minv @ Wm @ U, atol=1e-10)
        np.testing.assert_allclose(U, Q @ self.beta, atol=1e-10)


def _random_row_normalized(rng: np.random.Generator, n: int) -> SpatialWeights:
    raw = rng.uniform(0.0, 1.0, (n, n)) * (rng.uniform(size=(n, n)) < 0.5)
    np.fill_diagonal(raw, 0.0)
    raw[np.arange(n), (np.arange(n) + 1) % n] += 0.1
    return row_normalize(SpatialWeights(raw))


def test_lag_transform_is_linear() -> None:
    rng = np.random.default_rng(5)
    W = _random_row_normalized(rng, 7)
    A, B = rng.normal(size=(7, 3)), rng.normal(size=(7, 3))
    a, b = 2.5, -0.75
    for rho in (-0.8, 0.3, 0.95):
        np.testing.assert_allclose(
            lag_transform(W, rho, a * A + b * B),
            a * lag_transform(W, rho, A) + b * lag_transform(W, rho, B),
            atol=1e-10,
        )


def test_row_normalized_lag_is_regular_inside_the_box() -> None:
    rng = np.random.default_rng(2024)
    for _ in range(100):
        n = int(rng.integers(2, 40))
        W = _random_row_normalized(rng, n)
        rho = float(rng.uniform(-0.99, 0.99))
        out = lag_transform(W, rho, np.ones((n, 1)))
        # rows summing to 1 give (I - rho W)^-1 1 = 1 / (1 - rho)
        np.testing.assert_allclose(out[:, 0], 1.0 / (1.0 - rho), rtol=1e-8)


class TestLagDerivativesInRho(unittest.TestCase):
    h = 1e-6

    def setUp(self) -> None:
        rng = np.random.default_rng(31)
        self.W = _random_row_normalized(rng, 9)
        self.X = np.hstack([np.ones((9, 1)), rng.normal(size=(9, 2))])
        self.beta = np.hstack([np.zeros((3, 1)), rng.normal(size=(3, 3))])

    def test_u_is_rho_derivative_of_lagged_predictor(self) -> None:
        Xb = self.X @ self.beta
        for rho in (-0.7, 0.0, 0.45, 0.9):
            U, _, _ = lag_derivative_terms(self.W, rho, self.X, self.beta)
            fd = (lag_transform(self.W, rho + self.h, Xb) - lag_transform(self.W, rho - self.h, Xb)) / (2 * self.h)
            np.testing.assert_allclose(U, fd, rtol=1e-5, atol=1e-5)

    def test_v_is_half_rho_derivative_of_u(self) -> None:
        for rho in (-0.5, 0.2, 0.8):
            _, V, _ = lag_derivative_terms(self.W, rho, self.X, self.beta)
            U_up, _, _ = lag_derivative_terms(self.W, rho + self.h, self.X, self.beta)
            U_down, _, _ = lag_derivative_terms(self.W, rho - self.h, self.X, self.beta)
            np.testing.assert_allclose((U_up - U_down) / (2 * self.h), 2 * V, rtol=1e-5, atol=1e-5)
