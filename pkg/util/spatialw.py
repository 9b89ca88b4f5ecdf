"""Spatial weights matrices and the lag operator M = I - rho W.

Solves against M go through a cached dense LU factorization; an explicit
inverse is never formed.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgWarning, get_lapack_funcs, lu_factor, lu_solve
from scipy.spatial.distance import cdist

from util.errors import (
    DuplicatePoints,
    InputError,
    InvalidCutoff,
    InvalidK,
    IsolatedPoint,
    NegativeWeight,
    NonFinite,
    NonSquare,
    NonzeroDiagonal,
    RhoOutOfBounds,
    SingularLag,
    ZeroDistance,
)

logger = logging.getLogger(__name__)

# Reciprocal 1-norm condition estimate below which M counts as singular.
SINGULAR_RCOND = 1e-14

CONSTRUCTIONS = ("band", "knn", "inverse_distance", "user_supplied")


@dataclass(frozen=True, eq=False)
class SpatialWeights:
    weights: np.ndarray
    row_normalized: bool = False
    construction: str = "user_supplied"
    parameter: float | None = None
    zero_rows: tuple[int, ...] = ()
    _lag_cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        W = np.array(self.weights, dtype=float, copy=True)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise NonSquare(W.shape)
        finite = np.isfinite(W)
        if not finite.all():
            i, j = np.argwhere(~finite)[0]
            raise NonFinite(int(i), int(j))
        if (W < 0).any():
            i, j = np.argwhere(W < 0)[0]
            raise NegativeWeight(int(i), int(j))
        diag = np.flatnonzero(np.diag(W) != 0)
        if diag.size:
            raise NonzeroDiagonal(int(diag[0]))
        if self.construction not in CONSTRUCTIONS:
            raise InputError(f"Unknown weights construction {self.construction!r}")
        W.setflags(write=False)
        object.__setattr__(self, "weights", W)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def is_empty(self) -> bool:
        return not self.weights.any()

    def lag(self, rho: float) -> LagAlgebra:
        """Factorization of I - rho W, cached for the most recent rho."""
        rho = float(rho)
        cached = self._lag_cache.get("current")
        if cached is not None and cached.rho == rho:
            return cached
        algebra = LagAlgebra(self, rho)
        self._lag_cache["current"] = algebra
        return algebra

    def subset(self, rows: np.ndarray) -> SpatialWeights:
        rows = np.asarray(rows)
        return SpatialWeights(
            self.weights[np.ix_(rows, rows)],
            row_normalized=False,
            construction=self.construction,
            parameter=self.parameter,
        )

    def describe(self) -> dict:
        return {
            "construction": self.construction,
            "parameter": self.parameter,
            "row_normalized": self.row_normalized,
            "zero_rows": list(self.zero_rows),
            "n": self.n,
        }


class LagAlgebra:
    """Solve context for M = I - rho W at one fixed rho."""

    def __init__(self, weights: SpatialWeights, rho: float):
        if not -1.0 <= rho <= 1.0:
            raise RhoOutOfBounds(rho)
        self.rho = rho
        self.n = weights.n
        self._lu = None
        if rho == 0.0:
            self.rcond = 1.0
            return

        M = np.eye(self.n) - rho * weights.weights
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LinAlgWarning)
            lu, piv = lu_factor(M, check_finite=False)
        gecon = get_lapack_funcs("gecon", (lu,))
        anorm = np.linalg.norm(M, 1)
        rcond, _info = gecon(lu, anorm, norm="1")
        self.rcond = float(rcond)
        logger.debug("Factorized I - rho W at rho=%.6g, rcond=%.3g", rho, self.rcond)
        if not np.isfinite(self.rcond) or self.rcond < SINGULAR_RCOND:
            raise SingularLag(rho, self.rcond)
        self._lu = (lu, piv)

    def solve(self, A: np.ndarray) -> np.ndarray:
        A = np.asarray(A, dtype=float)
        if self._lu is None:
            return A.copy()
        return lu_solve(self._lu, A, check_finite=False)


def lag_transform(W: SpatialWeights, rho: float, A: np.ndarray) -> np.ndarray:
    """Return T with (I - rho W) T = A."""
    return W.lag(rho).solve(A)


def lag_derivative_terms(
    W: SpatialWeights, rho: float, X: np.ndarray, beta: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """U = M^-1 W M^-1 X beta, V = M^-1 W U and Q = M^-1 W M^-1 X."""
    lag = W.lag(rho)
    Xtilde = lag.solve(X)
    Q = lag.solve(W.weights @ Xtilde)
    U = lag.solve(W.weights @ (Xtilde @ beta))
    V = lag.solve(W.weights @ U)
    return U, V, Q


def _coords(coords) -> np.ndarray:
    pts = np.asarray(coords, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise InputError(f"Coordinates must be an n x d matrix, got shape {pts.shape}")
    finite = np.isfinite(pts)
    if not finite.all():
        i, j = np.argwhere(~finite)[0]
        raise NonFinite(int(i), int(j))
    return pts


def _coincident(D: np.ndarray) -> tuple[int, int] | None:
    off = D + np.diag(np.full(D.shape[0], np.inf))
    hits = np.argwhere(off == 0)
    if hits.size:
        return int(hits[0][0]), int(hits[0][1])
    return None


def build_band_weights(n: int, k: int) -> SpatialWeights:
    """W_ij = 1/k when 1 <= |i - j| <= k. Boundary rows are left unnormalized."""
    if not 1 <= k < n:
        raise InvalidK(k, n)
    idx = np.arange(n)
    gap = np.abs(idx[:, None] - idx[None, :])
    W = np.where((gap >= 1) & (gap <= k), 1.0 / k, 0.0)
    return SpatialWeights(W, row_normalized=False, construction="band", parameter=float(k))


def build_knn_weights(coords, k: int) -> SpatialWeights:
    """Weight 1/k on each point's k nearest neighbours; ties go to the lower index."""
    pts = _coords(coords)
    n = pts.shape[0]
    if not 1 <= k < n:
        raise InvalidK(k, n)
    D = cdist(pts, pts)
    pair = _coincident(D)
    if pair is not None:
        raise DuplicatePoints(*pair)
    np.fill_diagonal(D, np.inf)
    nearest = np.argsort(D, axis=1, kind="stable")[:, :k]
    W = np.zeros((n, n))
    np.put_along_axis(W, nearest, 1.0 / k, axis=1)
    return SpatialWeights(W, row_normalized=True, construction="knn", parameter=float(k))


def build_inverse_distance_weights(coords, cutoff: float) -> SpatialWeights:
    """W_ij = 1/d(i,j) for neighbours within cutoff, then row-normalized."""
    if not cutoff > 0:
        raise InvalidCutoff(cutoff)
    pts = _coords(coords)
    n = pts.shape[0]
    D = cdist(pts, pts)
    pair = _coincident(D)
    if pair is not None:
        raise ZeroDistance(*pair)
    within = (D <= cutoff) & ~np.eye(n, dtype=bool)
    isolated = np.flatnonzero(~within.any(axis=1))
    if isolated.size:
        raise IsolatedPoint(int(isolated[0]), cutoff)
    with np.errstate(divide="ignore"):
        raw = np.where(within, 1.0 / D, 0.0)
    W = raw / raw.sum(axis=1, keepdims=True)
    return SpatialWeights(W, row_normalized=True, construction="inverse_distance", parameter=float(cutoff))


def row_normalize(W: SpatialWeights) -> SpatialWeights:
    """Divide each nonzero row by its sum; all-zero rows pass through and are flagged."""
    sums = W.weights.sum(axis=1)
    zero_rows = tuple(int(i) for i in np.flatnonzero(sums == 0))
    if zero_rows:
        logger.warning("row_normalize: %d all-zero rows left unchanged: %s", len(zero_rows), list(zero_rows))
    safe = np.where(sums == 0, 1.0, sums)
    return SpatialWeights(
        W.weights / safe[:, None],
        row_normalized=True,
        construction=W.construction,
        parameter=W.parameter,
        zero_rows=zero_rows,
    )
