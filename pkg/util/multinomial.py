"""Multinomial / cross-entropy regression with an optional spatial lag.

p = softmax(X beta) or softmax(M^-1 X beta). The model has no precision
design; fitted results carry gamma = None.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import approx_fprime
from scipy.special import xlogy

from util.compdata import CompositionMatrix, validate_composition
from util.dirichlet_core import link_mu, observation_weights
from util.errors import DimensionMismatch, InputError, NonPositiveProbability
from util.metrics import aic as aic_value
from util.optim import (
    PARAMETER_ORDER,
    FitConfig,
    FitResult,
    attach_covariance,
    initial_params,
    fit_bounds,
    maximize,
)
from util.spatialw import SpatialWeights, lag_derivative_terms

logger = logging.getLogger(__name__)

# Step for the finite-difference Hessian behind multinomial standard errors.
FD_HESSIAN_STEP = 1e-6


@dataclass(frozen=True, eq=False)
class TrialCounts:
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or counts.size == 0:
            raise InputError(f"Trial counts must be a non-empty vector, got shape {counts.shape}")
        if not np.all(np.equal(np.mod(counts, 1), 0)) or (counts < 1).any():
            raise InputError("Trial counts must be integers >= 1")
        counts = counts.astype(np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def n(self) -> int:
        return self.counts.shape[0]


def link_p(Xeff: np.ndarray, beta: np.ndarray) -> np.ndarray:
    return link_mu(Xeff, beta)


def _values(Y) -> np.ndarray:
    return np.asarray(getattr(Y, "values", Y), dtype=float)


def ce_loss(Y, P: np.ndarray) -> float:
    """Summed cross-entropy -sum_ij y_ij ln p_ij."""
    y = _values(Y)
    P = np.asarray(P, dtype=float)
    if y.shape != P.shape:
        raise DimensionMismatch(f"Y is {y.shape} but P is {P.shape}")
    bad = (P <= 0) & (y > 0)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise NonPositiveProbability(int(row), int(col))
    return float(-xlogy(y, P).sum())


def grad_ce_beta(Y, Xeff: np.ndarray, P: np.ndarray, row_weights: np.ndarray | None = None) -> np.ndarray:
    """d CE / d beta = Xeff^T (P - Y) with the reference column zeroed."""
    y = _values(Y)
    w = observation_weights(y.shape[0], row_weights)
    G = np.asarray(Xeff).T @ (w[:, None] * (P - y))
    G[:, 0] = 0.0
    return G


def grad_ce_rho(Y, P: np.ndarray, U: np.ndarray, row_weights: np.ndarray | None = None) -> float:
    y = _values(Y)
    w = observation_weights(y.shape[0], row_weights)
    centred = U - (P * U).sum(axis=1, keepdims=True)
    return float(np.sum(w[:, None] * -y * centred))


def multinomial_loglik(Ytilde, counts: TrialCounts, P: np.ndarray) -> float:
    """sum_i n_i sum_j ytilde_ij ln p_ij, multinomial coefficients dropped."""
    y = _values(Ytilde)
    if counts.n != y.shape[0]:
        raise DimensionMismatch(f"{counts.n} trial counts for {y.shape[0]} rows")
    return float(np.sum(counts.counts * xlogy(y, np.asarray(P, dtype=float)).sum(axis=1)))


def fit_multinomial(
    Y: CompositionMatrix | np.ndarray,
    X: np.ndarray,
    W: SpatialWeights | None = None,
    counts: TrialCounts | None = None,
    config: FitConfig | None = None,
    observed: np.ndarray | None = None,
) -> FitResult:
    """Minimize cross-entropy (or maximize the count-weighted likelihood) over free beta and rho."""
    config = config or FitConfig()
    if not isinstance(Y, CompositionMatrix):
        Y = validate_composition(Y)
    X = np.asarray(X, dtype=float)
    n, J = Y.values.shape
    if X.shape[0] != n:
        raise DimensionMismatch(f"Y has {n} rows but X has {X.shape[0]}")
    if counts is not None and counts.n != n:
        raise DimensionMismatch(f"{counts.n} trial counts for {n} rows")
    spatial = W is not None
    if spatial and W.n != n:
        raise DimensionMismatch(f"W is {W.n} x {W.n} for {n} observations")

    template = initial_params(config, X.shape[1], J, None, spatial)
    mask = observation_weights(n, observed)
    row_weights = mask if counts is None else mask * counts.counts
    y = Y.values

    def objective(theta: np.ndarray) -> tuple[float, np.ndarray]:
        params = template.with_free_vector(theta)
        if spatial:
            lag = W.lag(params.rho)
            Xeff = lag.solve(X)
        else:
            Xeff = X
        P = link_p(Xeff, params.beta)
        value = float(np.sum(row_weights * xlogy(y, P).sum(axis=1)))
        G = -grad_ce_beta(Y, Xeff, P, row_weights)
        grad = G[:, 1:].reshape(-1, order="F")
        if spatial:
            U, _, _ = lag_derivative_terms(W, params.rho, X, params.beta)
            grad = np.append(grad, -grad_ce_rho(Y, P, U, row_weights))
        return value, grad

    theta0 = template.free_vector()
    bounds = fit_bounds(theta0.size, spatial, config)
    logger.info(
        "Fitting %s multinomial model (%s): n=%d, J=%d, K=%d, %d free parameters",
        "spatial" if spatial else "non-spatial",
        "count-weighted likelihood" if counts is not None else "cross-entropy",
        int(np.count_nonzero(mask)), J, X.shape[1], theta0.size,
    )
    opt = maximize(objective, theta0, bounds, config)
    params_hat = template.with_free_vector(opt.x)

    notes = {
        "objective": "count_weighted_loglik" if counts is not None else "negative_cross_entropy",
        "zero_replacement_applied": False,
        "parameter_order": PARAMETER_ORDER,
        "gamma": "absent (multinomial model has no precision design)",
        "observations_used": int(np.count_nonzero(mask)),
        "termination_message": opt.message,
        "projected_gradient_norm": opt.projected_gradient_norm,
        "n_evaluations": opt.n_evaluations,
        "rejected_trial_points": opt.n_rejected,
        "seed": config.seed,
    }
    if spatial:
        notes["weights"] = W.describe()
        notes["rho_identified"] = not W.is_empty()

    cov, se = (None, None)
    if config.compute_covariance:
        def fd_hessian() -> np.ndarray:
            H = approx_fprime(opt.x, lambda t: objective(t)[1], FD_HESSIAN_STEP)
            return 0.5 * (H + H.T)

        cov, se = attach_covariance(fd_hessian, notes, "finite_difference")

    k = theta0.size
    result = FitResult(
        model="multinomial",
        params=params_hat,
        loglik_hat=opt.value,
        aic=aic_value(opt.value, k),
        n_free=k,
        parameter_names=template.parameter_names(),
        covariance=cov,
        std_errors=se,
        iterations=opt.iterations,
        converged=opt.converged,
        termination=opt.termination,
        objective_trace=opt.objective_trace,
        notes=notes,
    )
    log = logger.info if result.converged else logger.warning
    log("Multinomial fit finished: objective=%.6f, %d iterations, termination=%s, converged=%s",
        result.loglik_hat, result.iterations, result.termination, result.converged)
    return result
