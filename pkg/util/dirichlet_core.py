"""Non-spatial Dirichlet regression in the (mu, phi) parametrization.

mu = softmax(X beta) row-wise with beta[:, 0] pinned to zero, phi = exp(Z gamma),
alpha = phi * mu. Derivatives are evaluated per observation in linear-predictor
space and then pulled back through the designs, so the same curvature terms
serve both this module and the spatial lag model.

Free parameter order everywhere: beta[:, 1:] flattened column-major, then gamma,
then rho when present.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import special

from util.compdata import CompositionMatrix
from util.errors import (
    DimensionMismatch,
    InputError,
    NonFiniteLinearPredictor,
    NonPositiveLabel,
    Overflow,
    RhoOutOfBounds,
)
from util.specfun import digamma, ln_gamma, trigamma

logger = logging.getLogger(__name__)

# exp() of anything above this overflows a double.
EXP_LIMIT = 700.0


@dataclass(frozen=True, eq=False)
class ModelParams:
    beta: np.ndarray
    gamma: np.ndarray | None = None
    rho: float | None = None

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float, copy=True)
        if beta.ndim != 2 or beta.shape[1] < 2:
            raise DimensionMismatch(f"beta must be K x J with J >= 2, got shape {beta.shape}")
        if np.any(beta[:, 0] != 0.0):
            raise InputError("beta[:, 0] must be exactly zero (reference class)")
        if not np.isfinite(beta).all():
            raise InputError("beta has non-finite entries")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        if self.gamma is not None:
            gamma = np.array(self.gamma, dtype=float, copy=True).reshape(-1)
            if not np.isfinite(gamma).all():
                raise InputError("gamma has non-finite entries")
            gamma.setflags(write=False)
            object.__setattr__(self, "gamma", gamma)
        if self.rho is not None:
            rho = float(self.rho)
            if not np.isfinite(rho) or not -1.0 <= rho <= 1.0:
                raise RhoOutOfBounds(rho)
            object.__setattr__(self, "rho", rho)

    @property
    def K(self) -> int:
        return self.beta.shape[0]

    @property
    def J(self) -> int:
        return self.beta.shape[1]

    @property
    def K_Z(self) -> int:
        return 0 if self.gamma is None else self.gamma.shape[0]

    @property
    def is_spatial(self) -> bool:
        return self.rho is not None

    @classmethod
    def zeros(cls, K: int, J: int, K_Z: int | None, spatial: bool) -> ModelParams:
        gamma = None if K_Z is None else np.zeros(K_Z)
        return cls(np.zeros((K, J)), gamma, 0.0 if spatial else None)

    def free_vector(self, include_gamma: bool = True) -> np.ndarray:
        parts = [self.beta[:, 1:].reshape(-1, order="F")]
        if include_gamma and self.gamma is not None:
            parts.append(self.gamma)
        if self.rho is not None:
            parts.append(np.array([self.rho]))
        return np.concatenate(parts)

    def with_free_vector(self, theta: np.ndarray, include_gamma: bool = True) -> ModelParams:
        """Same layout as self, values taken from theta."""
        K, J = self.beta.shape
        n_beta = K * (J - 1)
        beta = np.zeros((K, J))
        beta[:, 1:] = np.asarray(theta[:n_beta]).reshape((K, J - 1), order="F")
        pos = n_beta
        gamma = self.gamma
        if include_gamma and self.gamma is not None:
            gamma = np.asarray(theta[pos:pos + self.K_Z])
            pos += self.K_Z
        rho = None
        if self.rho is not None:
            rho = float(theta[pos])
            pos += 1
        if pos != len(theta):
            raise DimensionMismatch(f"Free vector has {len(theta)} entries, layout expects {pos}")
        return ModelParams(beta, gamma, rho)

    def parameter_names(self, include_gamma: bool = True) -> list[str]:
        K, J = self.beta.shape
        names = [f"beta[{p},{d}]" for d in range(1, J) for p in range(K)]
        if include_gamma and self.gamma is not None:
            names += [f"gamma[{k}]" for k in range(self.K_Z)]
        if self.rho is not None:
            names.append("rho")
        return names

    def to_dict(self) -> dict:
        return {
            "beta": self.beta.tolist(),
            "gamma": None if self.gamma is None else self.gamma.tolist(),
            "rho": self.rho,
        }

    @staticmethod
    def from_dict(data: dict) -> ModelParams:
        gamma = data.get("gamma")
        return ModelParams(
            np.asarray(data["beta"], dtype=float),
            None if gamma is None else np.asarray(gamma, dtype=float),
            data.get("rho"),
        )


@dataclass(frozen=True, eq=False)
class LinkedState:
    mu: np.ndarray
    phi: np.ndarray
    alpha: np.ndarray


def link_mu(Xeff: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Row-wise softmax of Xeff beta (max-subtracted inside scipy)."""
    beta = np.asarray(beta, dtype=float)
    if np.any(beta[:, 0] != 0.0):
        raise InputError("beta[:, 0] must be exactly zero (reference class)")
    eta = np.asarray(Xeff, dtype=float) @ beta
    finite = np.isfinite(eta)
    if not finite.all():
        raise NonFiniteLinearPredictor(int(np.argwhere(~finite)[0][0]))
    mu = special.softmax(eta, axis=1)
    # underflowed classes are floored so alpha stays in the ln-gamma domain
    return np.maximum(mu, np.finfo(float).tiny)


def link_phi(Z: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    t = np.asarray(Z, dtype=float) @ np.asarray(gamma, dtype=float)
    finite = np.isfinite(t)
    if not finite.all():
        raise NonFiniteLinearPredictor(int(np.flatnonzero(~finite)[0]))
    over = t > EXP_LIMIT
    if over.any():
        row = int(np.flatnonzero(over)[0])
        raise Overflow(row, float(t[row]))
    return np.exp(t)


def link(Xeff: np.ndarray, Z: np.ndarray, params: ModelParams) -> LinkedState:
    mu = link_mu(Xeff, params.beta)
    phi = link_phi(Z, params.gamma)
    return LinkedState(mu=mu, phi=phi, alpha=phi[:, None] * mu)


def observation_weights(n: int, observed: np.ndarray | None) -> np.ndarray:
    if observed is None:
        return np.ones(n)
    w = np.asarray(observed, dtype=float).reshape(-1)
    if w.shape[0] != n:
        raise DimensionMismatch(f"Observation mask has {w.shape[0]} entries for {n} rows")
    return w


def log_labels(Y: CompositionMatrix) -> np.ndarray:
    values = Y.values
    bad = values <= 0
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise NonPositiveLabel(int(row), int(col))
    return np.log(values)


def loglik_terms(Y: CompositionMatrix, state: LinkedState) -> np.ndarray:
    """Per-observation log-density contributions."""
    logy = log_labels(Y)
    return (
        ln_gamma(state.phi)
        - ln_gamma(state.alpha).sum(axis=1)
        + ((state.alpha - 1.0) * logy).sum(axis=1)
    )


def loglik(Y: CompositionMatrix, state: LinkedState, observed: np.ndarray | None = None) -> float:
    terms = loglik_terms(Y, state)
    return float(np.sum(observation_weights(terms.shape[0], observed) * terms))


@dataclass(frozen=True, eq=False)
class ScoreTerms:
    """Per-observation first and second derivatives in linear-predictor space.

    a[i, d]  = d l_i / d eta_id
    b[i]     = d l_i / d t_i         (t = Z gamma)
    h_eta    = d2 l_i / d eta d eta  (n x J x J)
    a_t      = d a[i, d] / d t_i
    b_t      = d b[i] / d t_i
    """

    logy: np.ndarray
    psi_alpha: np.ndarray
    a: np.ndarray
    b: np.ndarray
    h_eta: np.ndarray | None = None
    a_t: np.ndarray | None = None
    b_t: np.ndarray | None = None


def score_terms(Y: CompositionMatrix, state: LinkedState, curvature: bool = False) -> ScoreTerms:
    mu, phi, alpha = state.mu, state.phi, state.alpha
    logy = log_labels(Y)
    psi_alpha = digamma(alpha)
    g = logy - psi_alpha
    r = g - (mu * g).sum(axis=1, keepdims=True)
    a = phi[:, None] * mu * r
    b = phi * (digamma(phi) + (mu * g).sum(axis=1))
    if not curvature:
        return ScoreTerms(logy, psi_alpha, a, b)

    J = mu.shape[1]
    psi1_alpha = trigamma(alpha)
    w = mu * mu * psi1_alpha
    s2 = w.sum(axis=1)
    mr = mu * r
    p1 = phi[:, None, None]
    p2 = (phi * phi)[:, None, None]
    outer = lambda u, v: u[:, :, None] * v[:, None, :]  # noqa: E731

    h_eta = (
        -p1 * (outer(mr, mu) + outer(mu, mr))
        + p2 * (outer(w, mu) + outer(mu, w))
        - p2 * s2[:, None, None] * outer(mu, mu)
    )
    diag = np.arange(J)
    h_eta[:, diag, diag] += phi[:, None] * mr - (phi * phi)[:, None] * w
    h_eta = 0.5 * (h_eta + np.swapaxes(h_eta, 1, 2))

    a_t = a - (phi * phi)[:, None] * mu * (mu * psi1_alpha - s2[:, None])
    b_t = b + phi * phi * (trigamma(phi) - s2)
    return ScoreTerms(logy, psi_alpha, a, b, h_eta, a_t, b_t)


def grad_beta(
    Y: CompositionMatrix, Xeff: np.ndarray, state: LinkedState, observed: np.ndarray | None = None
) -> np.ndarray:
    terms = score_terms(Y, state)
    w = observation_weights(terms.a.shape[0], observed)
    G = np.asarray(Xeff).T @ (w[:, None] * terms.a)
    G[:, 0] = 0.0
    return G


def grad_gamma(
    Y: CompositionMatrix, Z: np.ndarray, state: LinkedState, observed: np.ndarray | None = None
) -> np.ndarray:
    terms = score_terms(Y, state)
    w = observation_weights(terms.b.shape[0], observed)
    return np.asarray(Z).T @ (w * terms.b)


def free_gradient(
    Xeff: np.ndarray, Z: np.ndarray, terms: ScoreTerms, w: np.ndarray, include_gamma: bool = True
) -> np.ndarray:
    """Gradient over free (beta, gamma) coordinates from precomputed score terms."""
    G = np.asarray(Xeff).T @ (w[:, None] * terms.a)
    parts = [G[:, 1:].reshape(-1, order="F")]
    if include_gamma:
        parts.append(np.asarray(Z).T @ (w * terms.b))
    return np.concatenate(parts)


def free_hessian(
    Xeff: np.ndarray, Z: np.ndarray, terms: ScoreTerms, w: np.ndarray, include_gamma: bool = True
) -> np.ndarray:
    """(beta, gamma) Hessian blocks from curvature-enabled score terms."""
    X = np.asarray(Xeff)
    K = X.shape[1]
    Jm = terms.a.shape[1] - 1
    Xw = w[:, None] * X

    h_bb = np.einsum("ip,idc,iq->dpcq", Xw, terms.h_eta[:, 1:, 1:], X).reshape(Jm * K, Jm * K)
    if not include_gamma:
        return 0.5 * (h_bb + h_bb.T)

    Zm = np.asarray(Z)
    h_bg = np.einsum("ip,id,ik->dpk", Xw, terms.a_t[:, 1:], Zm).reshape(Jm * K, Zm.shape[1])
    h_gg = Zm.T @ ((w * terms.b_t)[:, None] * Zm)
    H = np.block([[h_bb, h_bg], [h_bg.T, h_gg]])
    return 0.5 * (H + H.T)


def hessian(
    Y: CompositionMatrix,
    Xeff: np.ndarray,
    Z: np.ndarray,
    state: LinkedState,
    observed: np.ndarray | None = None,
) -> np.ndarray:
    """Symmetric Hessian over free beta (column-major) then gamma."""
    terms = score_terms(Y, state, curvature=True)
    w = observation_weights(terms.a.shape[0], observed)
    return free_hessian(Xeff, Z, terms, w)
