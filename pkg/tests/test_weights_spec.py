"""Tests for the weights builder-spec registry."""
import numpy as np
import pytest

from util.errors import InputError, InvalidK
from util.weights_spec import WEIGHTS_SPEC_REGISTRY, build_from_spec, parse_weights_spec

COORDS = np.array([[0.0, 0.0], [1.0, 0.0], [2.5, 0.0], [0.0, 1.5]])


def test_parse_known_specs() -> None:
    assert parse_weights_spec("knn:3") == ("knn", "3")
    assert parse_weights_spec("InvDist: 2.5") == ("invdist", "2.5")
    assert parse_weights_spec("band:1") == ("band", "1")


def test_paths_are_not_specs() -> None:
    assert parse_weights_spec("weights.csv") is None
    assert parse_weights_spec("C:/data/weights.csv") is None
    assert parse_weights_spec("/tmp/knn.csv") is None


def test_registry_names() -> None:
    assert set(WEIGHTS_SPEC_REGISTRY) == {"knn", "invdist", "band"}


def test_build_knn_from_spec() -> None:
    W = build_from_spec("knn:1", 4, COORDS)
    assert W.construction == "knn"
    np.testing.assert_allclose(W.weights.sum(axis=1), 1.0)


def test_build_invdist_from_spec() -> None:
    W = build_from_spec("invdist:2", 4, COORDS)
    assert W.construction == "inverse_distance"
    assert W.row_normalized


def test_build_band_needs_no_coords() -> None:
    W = build_from_spec("band:1", 3)
    np.testing.assert_array_equal(W.weights, [[0, 1, 0], [1, 0, 1], [0, 1, 0]])


def test_spec_errors() -> None:
    with pytest.raises(InputError):
        build_from_spec("knn:2", 4)
    with pytest.raises(InputError):
        build_from_spec("knn:two", 4, COORDS)
    with pytest.raises(InputError):
        build_from_spec("knn:1", 3, COORDS)
    with pytest.raises(InvalidK):
        build_from_spec("knn:4", 4, COORDS)
    with pytest.raises(InputError):
        build_from_spec("weights.csv", 4, COORDS)
