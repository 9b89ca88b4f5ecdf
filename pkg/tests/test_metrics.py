"""Tests for evaluation metrics."""
import math
import unittest

import numpy as np
import pytest

from util.errors import NonPositiveProbability, ShapeMismatch, ZeroRow, ZeroVariance
from util.metrics import (
    aic,
    cosine_similarity,
    cross_entropy_metric,
    evaluate,
    map_accuracy,
    map_assign,
    r2,
    rmse,
)


class TestR2(unittest.TestCase):
    def setUp(self) -> None:
        self.Y = np.array([[0.1, 0.9], [0.4, 0.6], [0.7, 0.3]])

    def test_perfect_fit(self) -> None:
        result = r2(self.Y, self.Y)
        np.testing.assert_allclose(result.per_class, 1.0)
        self.assertEqual(result.mean, 1.0)

    def test_column_means_give_zero(self) -> None:
        Yhat = np.tile(self.Y.mean(axis=0), (3, 1))
        np.testing.assert_allclose(r2(self.Y, Yhat).per_class, 0.0, atol=1e-12)

    def test_hand_sums(self) -> None:
        y = np.array([[0.0], [1.0], [2.0]])
        self.assertAlmostEqual(r2(y, np.ones((3, 1))).mean, 0.0)
        self.assertAlmostEqual(r2(y, np.array([[2.0], [1.0], [0.0]])).mean, -3.0)

    def test_zero_variance_class_excluded(self) -> None:
        Y = np.array([[0.2, 0.3, 0.5], [0.4, 0.1, 0.5], [0.1, 0.4, 0.5]])
        result = r2(Y, Y)
        self.assertEqual(result.zero_variance_classes, [2])
        self.assertTrue(math.isnan(result.per_class[2]))
        self.assertEqual(result.mean, 1.0)

    def test_all_classes_flat(self) -> None:
        with self.assertRaises(ZeroVariance):
            r2(np.array([[0.5, 0.5], [0.5, 0.5]]), np.array([[0.4, 0.6], [0.6, 0.4]]))


def test_rmse() -> None:
    Y = np.array([[0.2, 0.8], [0.6, 0.4]])
    assert rmse(Y, Y) == 0.0
    assert rmse(np.array([[1.0, 0.0]]), np.array([[0.5, 0.5]])) == pytest.approx(0.5)
    Yhat = np.array([[0.3, 0.7], [0.5, 0.5]])
    assert rmse(Y[::-1], Yhat[::-1]) == pytest.approx(rmse(Y, Yhat))
    with pytest.raises(ShapeMismatch):
        rmse(Y, Y[:1])


def test_cross_entropy_metric() -> None:
    half = np.full((3, 2), 0.5)
    assert cross_entropy_metric(half, half) == pytest.approx(math.log(2.0))
    assert cross_entropy_metric(np.array([[1.0, 0.0]]), np.array([[0.25, 0.75]])) == pytest.approx(-math.log(0.25))
    rng = np.random.default_rng(0)
    Y = rng.dirichlet([1, 2, 3], size=20)
    Yhat = rng.dirichlet([3, 2, 1], size=20)
    entropy = float(-np.sum(Y * np.log(Y)) / 20)
    assert cross_entropy_metric(Y, Yhat) >= entropy
    with pytest.raises(NonPositiveProbability):
        cross_entropy_metric(np.array([[0.5, 0.5]]), np.array([[1.0, 0.0]]))


def test_cosine_similarity() -> None:
    Y = np.array([[0.2, 0.8], [0.6, 0.4]])
    assert cosine_similarity(Y, Y) == pytest.approx(1.0)
    assert cosine_similarity(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])) == 0.0
    assert cosine_similarity(np.array([[1.0, 0.0]]), np.array([[0.5, 0.5]])) == pytest.approx(0.7071067812, abs=1e-10)
    with pytest.raises(ZeroRow):
        cosine_similarity(np.array([[1.0, 0.0]]), np.array([[0.0, 0.0]]))


def test_aic() -> None:
    assert aic(0.0, 3) == 6.0
    assert aic(-100.0, 8) == 216.0
    assert aic(-10.0, 2) > aic(-5.0, 2)


def test_map_assign_and_accuracy() -> None:
    np.testing.assert_array_equal(map_assign(np.array([[0.2, 0.5, 0.3]])), [1])
    np.testing.assert_array_equal(map_assign(np.full((1, 3), 1 / 3)), [0])
    row = np.array([[0.2, 0.5, 0.3]])
    np.testing.assert_array_equal(map_assign(np.exp(5 * row)), map_assign(row))

    Y = np.array([[0.7, 0.3], [0.2, 0.8], [0.6, 0.4], [0.1, 0.9]])
    Yhat = np.array([[0.6, 0.4], [0.4, 0.6], [0.3, 0.7], [0.2, 0.8]])
    assert map_accuracy(Y, Yhat) == 0.75


def test_evaluate_report() -> None:
    Y = np.array([[0.2, 0.3, 0.5], [0.4, 0.1, 0.5], [0.1, 0.4, 0.5]])
    report = evaluate(Y, Y, aic_value=12.5)
    data = report.to_dict()
    assert data["r2_per_class"][2] is None
    assert data["aic"] == 12.5
    assert report.cosine_similarity == pytest.approx(1.0)
    assert set(report.scalar_items()) == {"r2_mean", "rmse", "cross_entropy", "cosine_similarity", "aic", "map_accuracy"}


def _compositions(seed: int, n: int = 15, J: int = 4) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    return rng.dirichlet(np.full(J, 1.5), size=n), rng.dirichlet(np.full(J, 3.0), size=n)


@pytest.mark.parametrize("seed", range(3))
def test_metrics_ignore_shared_row_order(seed: int) -> None:
    Y, Yhat = _compositions(seed)
    order = np.random.default_rng(100 + seed).permutation(Y.shape[0])
    Yp, Yhatp = Y[order], Yhat[order]
    np.testing.assert_allclose(r2(Yp, Yhatp).per_class, r2(Y, Yhat).per_class, rtol=1e-12)
    assert rmse(Yp, Yhatp) == pytest.approx(rmse(Y, Yhat), rel=1e-12)
    assert cross_entropy_metric(Yp, Yhatp) == pytest.approx(cross_entropy_metric(Y, Yhat), rel=1e-12)
    assert cosine_similarity(Yp, Yhatp) == pytest.approx(cosine_similarity(Y, Yhat), rel=1e-12)
    assert map_accuracy(Yp, Yhatp) == map_accuracy(Y, Yhat)


def test_rmse_is_symmetric() -> None:
    Y, Yhat = _compositions(9)
    assert rmse(Y, Yhat) == rmse(Yhat, Y)


def test_cross_entropy_is_not_symmetric() -> None:
    Y = np.array([[0.5, 0.5]])
    Yhat = np.array([[0.9, 0.1]])
    assert cross_entropy_metric(Y, Yhat) == pytest.approx(-0.5 * (math.log(0.9) + math.log(0.1)), abs=1e-12)
    assert cross_entropy_metric(Yhat, Y) == pytest.approx(math.log(2.0), abs=1e-12)
