"""Dirichlet regression with a spatial lag on the mean design.

mu = softmax(M^-1 X beta) with M = I - rho W. Everything from dirichlet_core
applies with X replaced by Xtilde = M^-1 X; this module adds the rho score
and the rho rows of the Hessian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from util.compdata import CompositionMatrix
from util.dirichlet_core import (
    LinkedState,
    ModelParams,
    ScoreTerms,
    observation_weights,
    free_gradient,
    free_hessian,
    grad_beta,
    grad_gamma,
    link,
    loglik,
    score_terms,
)
from util.errors import DimensionMismatch, InputError
from util.spatialw import SpatialWeights, lag_derivative_terms


@dataclass(frozen=True, eq=False)
class SpatialLinkedState:
    base: LinkedState
    Xtilde: np.ndarray
    Z: np.ndarray
    U: np.ndarray
    V: np.ndarray
    Q: np.ndarray
    Omega: np.ndarray
    OmegaSum: np.ndarray
    rho: float


def spatial_link(X: np.ndarray, Z: np.ndarray, W: SpatialWeights, params: ModelParams) -> SpatialLinkedState:
    if params.rho is None:
        raise InputError("spatial_link requires params.rho")
    X = np.asarray(X, dtype=float)
    if W.n != X.shape[0]:
        raise DimensionMismatch(f"W is {W.n} x {W.n} but X has {X.shape[0]} rows")
    lag = W.lag(params.rho)
    Xtilde = lag.solve(X)
    U, V, Q = lag_derivative_terms(W, params.rho, X, params.beta)
    base = link(Xtilde, Z, params)
    Omega = base.mu * U
    return SpatialLinkedState(
        base=base,
        Xtilde=Xtilde,
        Z=np.asarray(Z, dtype=float),
        U=U,
        V=V,
        Q=Q,
        Omega=Omega,
        OmegaSum=Omega.sum(axis=1),
        rho=params.rho,
    )


def spatial_loglik(Y: CompositionMatrix, state: SpatialLinkedState, observed: np.ndarray | None = None) -> float:
    return loglik(Y, state.base, observed)


def rho_score_terms(state: SpatialLinkedState, terms: ScoreTerms) -> tuple[np.ndarray, np.ndarray]:
    """F_ij = ln y_ij (U_ij - Omega_i) and G_ij = U_ij (psi(alpha_ij) - sum_j' mu_ij' psi(alpha_ij'))."""
    mu = state.base.mu
    F = terms.logy * (state.U - state.OmegaSum[:, None])
    psi_bar = (mu * terms.psi_alpha).sum(axis=1, keepdims=True)
    G = state.U * (terms.psi_alpha - psi_bar)
    return F, G


def _grad_rho_from_terms(state: SpatialLinkedState, terms: ScoreTerms, w: np.ndarray) -> float:
    F, G = rho_score_terms(state, terms)
    per_obs = state.base.phi * (state.base.mu * (F - G)).sum(axis=1)
    return float(np.sum(w * per_obs))


def grad_rho(Y: CompositionMatrix, state: SpatialLinkedState, observed: np.ndarray | None = None) -> float:
    terms = score_terms(Y, state.base)
    return _grad_rho_from_terms(state, terms, observation_weights(state.U.shape[0], observed))


def grad_beta_spatial(Y: CompositionMatrix, state: SpatialLinkedState, observed: np.ndarray | None = None) -> np.ndarray:
    return grad_beta(Y, state.Xtilde, state.base, observed)


def grad_gamma_spatial(Y: CompositionMatrix, state: SpatialLinkedState, observed: np.ndarray | None = None) -> np.ndarray:
    return grad_gamma(Y, state.Z, state.base, observed)


def spatial_free_gradient(
    Y: CompositionMatrix,
    state: SpatialLinkedState,
    observed: np.ndarray | None = None,
    include_gamma: bool = True,
) -> np.ndarray:
    terms = score_terms(Y, state.base)
    w = observation_weights(state.U.shape[0], observed)
    g = free_gradient(state.Xtilde, state.Z, terms, w, include_gamma)
    return np.append(g, _grad_rho_from_terms(state, terms, w))


def hessian_spatial(
    Y: CompositionMatrix,
    state: SpatialLinkedState,
    observed: np.ndarray | None = None,
    include_gamma: bool = True,
) -> np.ndarray:
    """Bordered Hessian over (free beta column-major, gamma, rho)."""
    terms = score_terms(Y, state.base, curvature=True)
    w = observation_weights(state.U.shape[0], observed)
    inner = free_hessian(state.Xtilde, state.Z, terms, w, include_gamma)

    U, V, Q = state.U, state.V, state.Q
    hU = np.einsum("idc,ic->id", terms.h_eta, U)

    h_rr = float(np.sum(w * (U * hU).sum(axis=1)) + 2.0 * np.sum(w[:, None] * terms.a * V))
    rb = state.Xtilde.T @ (w[:, None] * hU) + Q.T @ (w[:, None] * terms.a)
    border = [rb[:, 1:].reshape(-1, order="F")]
    if include_gamma:
        border.append(state.Z.T @ (w * (terms.a_t * U).sum(axis=1)))
    border = np.concatenate(border)

    m = inner.shape[0]
    H = np.empty((m + 1, m + 1))
    H[:m, :m] = inner
    H[:m, m] = border
    H[m, :m] = border
    H[m, m] = h_rr
    return H
