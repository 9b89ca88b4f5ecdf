"""Compositional label containers, design matrices and zero replacement."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from util.errors import (
    DimensionMismatch,
    InputError,
    NegativeEntry,
    NonFinite,
    RowSumViolation,
)

logger = logging.getLogger(__name__)

# Rows within this distance of 1 are renormalized, the rest are rejected.
ROW_SUM_TOLERANCE = 1e-9
# Entries below this count as zeros for the "auto" zero-replacement rule.
ZERO_THRESHOLD = 1e-12

ZERO_REPLACE_MODES = ("auto", "on", "off")


def _frozen(values: np.ndarray) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


def _first_bad(mask: np.ndarray) -> tuple[int, int]:
    row, col = np.argwhere(mask)[0]
    return int(row), int(col)


@dataclass(frozen=True, eq=False)
class CompositionMatrix:
    """n x J labels on the simplex. Build through validate_composition."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def J(self) -> int:
        return self.values.shape[1]

    def has_zeros(self) -> bool:
        return bool((self.values < ZERO_THRESHOLD).any())

    def subset(self, rows: np.ndarray) -> CompositionMatrix:
        return CompositionMatrix(self.values[rows])

    def __len__(self) -> int:
        return self.n


def validate_composition(values) -> CompositionMatrix:
    """Check simplex membership row by row and return the container.

    Rows that miss 1 by no more than ROW_SUM_TOLERANCE are divided by their sum.
    """
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise InputError(f"Compositions must be a non-empty 2-D matrix, got shape {arr.shape}")
    if arr.shape[1] < 2:
        raise InputError(f"Compositions need at least 2 classes, got {arr.shape[1]}")

    finite = np.isfinite(arr)
    if not finite.all():
        raise NonFinite(*_first_bad(~finite))
    negative = arr < 0
    if negative.any():
        row, col = _first_bad(negative)
        raise NegativeEntry(row, col, float(arr[row, col]))

    sums = arr.sum(axis=1)
    deviation = sums - 1.0
    bad = np.abs(deviation) > ROW_SUM_TOLERANCE
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise RowSumViolation(row, float(deviation[row]))

    return CompositionMatrix(arr / sums[:, None])


def zero_replace(Y: CompositionMatrix) -> CompositionMatrix:
    """Shrink every row towards the uniform composition: (y(n-1) + 1/J) / n."""
    n, J = Y.values.shape
    return CompositionMatrix((Y.values * (n - 1) + 1.0 / J) / n)


def prepare_labels(Y: CompositionMatrix, mode: str = "auto") -> tuple[CompositionMatrix, bool]:
    """Apply zero replacement according to mode; returns (labels, applied)."""
    if mode not in ZERO_REPLACE_MODES:
        raise InputError(f"zero_replace mode must be one of {ZERO_REPLACE_MODES}, got {mode!r}")
    apply = mode == "on" or (mode == "auto" and Y.has_zeros())
    if apply:
        logger.info("Zero replacement applied to %d x %d labels (mode=%s)", Y.n, Y.J, mode)
        return zero_replace(Y), True
    return Y, False


def add_intercept(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    return np.hstack([np.ones((A.shape[0], 1)), A])


@dataclass(frozen=True, eq=False)
class DesignPair:
    """Mean design X (n x K) and precision design Z (n x K_Z).

    Intercepts are never added here implicitly; the flags only record whether
    column 0 of each matrix is a constant 1 column.
    """

    X: np.ndarray
    Z: np.ndarray
    x_intercept: bool = True
    z_intercept: bool = True

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        Z = np.asarray(self.Z, dtype=float)
        if X.ndim != 2 or Z.ndim != 2:
            raise DimensionMismatch(f"X and Z must be 2-D, got {X.shape} and {Z.shape}")
        if X.shape[0] != Z.shape[0]:
            raise DimensionMismatch(f"X has {X.shape[0]} rows but Z has {Z.shape[0]}")
        for name, mat in (("X", X), ("Z", Z)):
            finite = np.isfinite(mat)
            if not finite.all():
                row, col = _first_bad(~finite)
                raise NonFinite(row, col)
            if mat.shape[1] == 0:
                raise DimensionMismatch(f"{name} has no columns")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "Z", _frozen(Z))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def K(self) -> int:
        return self.X.shape[1]

    @property
    def K_Z(self) -> int:
        return self.Z.shape[1]

    @classmethod
    def from_features(
        cls,
        features: np.ndarray,
        precision: np.ndarray | None = None,
        z_mode: str = "intercept",
    ) -> DesignPair:
        """Build (X, Z) from raw feature columns, prepending intercepts.

        z_mode: "intercept" (Z = 1), "copy-x" (Z = X) or "file" (Z = [1, precision]).
        """
        X = add_intercept(features)
        if z_mode == "intercept":
            Z = np.ones((X.shape[0], 1))
        elif z_mode == "copy-x":
            Z = X.copy()
        elif z_mode == "file":
            if precision is None:
                raise InputError("z_mode='file' requires a precision design")
            Z = add_intercept(precision)
        else:
            raise InputError(f"Unknown z_mode {z_mode!r}")
        return cls(X, Z, x_intercept=True, z_intercept=True)

    def subset(self, rows: np.ndarray) -> DesignPair:
        return DesignPair(self.X[rows], self.Z[rows], self.x_intercept, self.z_intercept)
