"""Box-constrained quasi-Newton maximization and the Dirichlet fitting driver."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg
from scipy.optimize import minimize

from util.compdata import ZERO_REPLACE_MODES, CompositionMatrix, prepare_labels, validate_composition
from util.dirichlet_core import (
    ModelParams,
    free_gradient,
    free_hessian,
    link,
    link_mu,
    link_phi,
    loglik,
    observation_weights,
    score_terms,
)
from util.dirichlet_sar import hessian_spatial, spatial_free_gradient, spatial_link, spatial_loglik
from util.errors import (
    ConfigError,
    DimensionMismatch,
    LineSearchFailure,
    MissingWeightsContext,
    NonFiniteLinearPredictor,
    NonFiniteObjective,
    NonPositiveProbability,
    Overflow,
    RhoOutOfBounds,
    SingularInformation,
    SingularLag,
)
from util.metrics import aic as aic_value
from util.spatialw import SpatialWeights, lag_transform

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
# Reciprocal condition number below which the observed information is not inverted.
INFORMATION_RCOND = 1e-12

TERMINATIONS = ("gradient", "objective", "max_iterations", "line_search_stalled", "other")

# Raised by the objective at trial points the line search may step back from.
INADMISSIBLE_POINT_ERRORS = (SingularLag, NonFiniteLinearPredictor, Overflow, NonPositiveProbability)
# Height of the penalty surface at a rejected trial point, relative to 1 + |f| at the current iterate.
REJECTION_PENALTY = 1e3


class _MinusInfinity(NonFiniteObjective):
    """Objective is -inf: the point is infinitely bad rather than undefined."""


PARAMETER_ORDER = "beta[:, 1:] column-major (beta[p,d] for d=1..J-1, p=0..K-1), then gamma, then rho"


@dataclass
class FitConfig:
    max_iterations: int = 500
    gradient_tolerance: float = 1e-8
    objective_rel_tolerance: float = 1e-10
    memory: int = 10
    rho_bounds: tuple[float, float] = (-1.0, 1.0)
    init: ModelParams | None = None
    seed: int | None = None
    zero_replace: str = "auto"
    common_parametrization: bool = False
    stall_gradient_tolerance: float = 1e-4
    max_line_search: int = 20
    compute_covariance: bool = True

    def __post_init__(self):
        if self.max_iterations < 1 or self.memory < 1 or self.max_line_search < 1:
            raise ConfigError("max_iterations, memory and max_line_search must be >= 1")
        for name in ("gradient_tolerance", "objective_rel_tolerance", "stall_gradient_tolerance"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        lo, hi = self.rho_bounds
        if not -1.0 <= lo <= hi <= 1.0:
            raise ConfigError(f"rho_bounds must be ordered inside [-1, 1], got {self.rho_bounds}")
        self.rho_bounds = (float(lo), float(hi))
        if self.zero_replace not in ZERO_REPLACE_MODES:
            raise ConfigError(f"zero_replace must be one of {ZERO_REPLACE_MODES}, got {self.zero_replace!r}")

    def to_dict(self) -> dict:
        data = {k: v for k, v in asdict(self).items() if k != "init"}
        data["rho_bounds"] = list(self.rho_bounds)
        data["init"] = "zeros" if self.init is None else self.init.to_dict()
        return data


@dataclass
class FitResult:
    model: str
    params: ModelParams
    loglik_hat: float
    aic: float
    n_free: int
    parameter_names: list[str]
    covariance: np.ndarray | None
    std_errors: np.ndarray | None
    iterations: int
    converged: bool
    termination: str
    objective_trace: list[float] = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def estimates(self, include_gamma: bool = True) -> np.ndarray:
        return self.params.free_vector(include_gamma)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "model": self.model,
            "params": self.params.to_dict(),
            "loglik_hat": self.loglik_hat,
            "aic": self.aic,
            "n_free": self.n_free,
            "parameter_names": list(self.parameter_names),
            "covariance": None if self.covariance is None else self.covariance.tolist(),
            "std_errors": None if self.std_errors is None else self.std_errors.tolist(),
            "iterations": self.iterations,
            "converged": self.converged,
            "termination": self.termination,
            "objective_trace": list(self.objective_trace),
            "notes": self.notes,
        }

    @staticmethod
    def from_dict(data: dict) -> FitResult:
        version = data.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigError(f"Unsupported FitResult schema_version {version!r}")
        cov = data.get("covariance")
        se = data.get("std_errors")
        return FitResult(
            model=data["model"],
            params=ModelParams.from_dict(data["params"]),
            loglik_hat=float(data["loglik_hat"]),
            aic=float(data["aic"]),
            n_free=int(data["n_free"]),
            parameter_names=list(data["parameter_names"]),
            covariance=None if cov is None else np.asarray(cov, dtype=float),
            std_errors=None if se is None else np.asarray(se, dtype=float),
            iterations=int(data["iterations"]),
            converged=bool(data["converged"]),
            termination=data["termination"],
            objective_trace=[float(v) for v in data.get("objective_trace", [])],
            notes=dict(data.get("notes", {})),
        )

    def summary(self) -> str:
        include_gamma = not self.notes.get("common_parametrization", False)
        values = self.estimates(include_gamma)
        lines = [f"{self.model} fit: {'converged' if self.converged else 'NOT converged'} ({self.termination}, {self.iterations} iterations)"]
        for i, name in enumerate(self.parameter_names):
            se = "" if self.std_errors is None else f"  se={self.std_errors[i]:.6g}"
            lines.append(f"  {name:<14} {values[i]: .6g}{se}")
        lines.append(f"  loglik = {self.loglik_hat:.6f}")
        lines.append(f"  AIC    = {self.aic:.6f}")
        if self.params.rho is not None:
            lines.append(f"  rho    = {self.params.rho:.6f}")
        return "\n".join(lines)


@dataclass
class MaximizeResult:
    x: np.ndarray
    value: float
    iterations: int
    converged: bool
    termination: str
    objective_trace: list[float]
    projected_gradient_norm: float
    n_evaluations: int
    message: str
    n_rejected: int = 0


def projected_gradient_norm(x: np.ndarray, grad: np.ndarray, bounds: list[tuple[float | None, float | None]]) -> float:
    """Infinity norm of the ascent step projected onto the box."""
    lo = np.array([-np.inf if b[0] is None else b[0] for b in bounds])
    hi = np.array([np.inf if b[1] is None else b[1] for b in bounds])
    step = np.clip(x + grad, lo, hi) - x
    return float(np.max(np.abs(step))) if step.size else 0.0


def _termination_tag(status: int, message: str) -> str:
    text = message.upper()
    if status == 0:
        if "GRADIENT" in text:
            return "gradient"
        if "REDUCTION" in text:
            return "objective"
        return "other"
    if status == 1:
        return "max_iterations"
    if status == 2 and "ABNORMAL" in text:
        return "line_search_stalled"
    return "other"


def maximize(
    objective: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    bounds: list[tuple[float | None, float | None]],
    config: FitConfig,
) -> MaximizeResult:
    """L-BFGS-B on the negated objective; the objective returns (value, gradient).

    A trial point where the objective raises one of INADMISSIBLE_POINT_ERRORS
    (e.g. a singular I - rho W at the rho bound) or evaluates to -inf is
    rejected: the search sees a penalty bowl rising from the current iterate
    and steps back. The starting point must be admissible.
    """
    x0 = np.asarray(x0, dtype=float)
    cache: dict = {"x": None}
    n_eval = 0
    n_rejected = 0

    def evaluate(x: np.ndarray) -> tuple[float, np.ndarray]:
        nonlocal n_eval
        if cache["x"] is not None and np.array_equal(x, cache["x"]):
            return cache["f"], cache["g"]
        f, g = objective(x)
        n_eval += 1
        f = float(f)
        g = np.asarray(g, dtype=float)
        if f == -np.inf:
            raise _MinusInfinity(f"Objective is -inf at evaluation {n_eval}")
        if not np.isfinite(f) or not np.isfinite(g).all():
            raise NonFiniteObjective(f"Objective or gradient not finite at evaluation {n_eval}")
        cache.update(x=np.array(x, copy=True), f=f, g=g)
        return f, g

    f0, _ = evaluate(x0)
    trace = [f0]
    iterate = {"x": np.array(x0, copy=True), "f": f0}

    def rejected(x: np.ndarray, reason: Exception) -> tuple[float, np.ndarray]:
        nonlocal n_rejected
        n_rejected += 1
        step = x - iterate["x"]
        dist2 = float(step @ step)
        penalty = REJECTION_PENALTY * (1.0 + abs(iterate["f"]))
        logger.debug("Rejected trial point %d (%s)", n_rejected, reason)
        if dist2 == 0.0:
            raise NonFiniteObjective(f"Objective inadmissible at the current iterate: {reason}")
        return -iterate["f"] + penalty, 2.0 * penalty * step / dist2

    def negated(x):
        try:
            f, g = evaluate(x)
        except (*INADMISSIBLE_POINT_ERRORS, _MinusInfinity) as exc:
            return rejected(np.asarray(x, dtype=float), exc)
        return -f, -g

    def record(xk):
        f, _ = evaluate(np.asarray(xk))
        iterate.update(x=np.array(xk, dtype=float, copy=True), f=f)
        trace.append(f)
        logger.debug("iteration %d: objective %.12g", len(trace) - 1, f)

    res = minimize(
        negated,
        x0,
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        callback=record,
        options={
            "maxiter": config.max_iterations,
            "maxcor": config.memory,
            "ftol": config.objective_rel_tolerance,
            "gtol": config.gradient_tolerance,
            "maxls": config.max_line_search,
        },
    )

    message = res.message if isinstance(res.message, str) else res.message.decode()
    x = np.asarray(res.x, dtype=float)
    try:
        value, grad = evaluate(x)
    except (*INADMISSIBLE_POINT_ERRORS, _MinusInfinity):
        x = iterate["x"]
        value, grad = evaluate(x)
    pg = projected_gradient_norm(x, grad, bounds)
    termination = _termination_tag(res.status, message)

    if termination == "line_search_stalled":
        if res.nit == 0:
            raise LineSearchFailure(f"Line search failed before the first step: {message}")
        converged = pg <= config.stall_gradient_tolerance
    else:
        converged = termination in ("gradient", "objective")

    return MaximizeResult(
        x=x,
        value=value,
        iterations=int(res.nit),
        converged=converged,
        termination=termination,
        objective_trace=trace,
        projected_gradient_norm=pg,
        n_evaluations=n_eval,
        message=message,
        n_rejected=n_rejected,
    )


def covariance_from_hessian(H: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Invert the observed information -H; returns (covariance, std_errors)."""
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise DimensionMismatch(f"Hessian must be square, got {H.shape}")
    info = -0.5 * (H + H.T)
    if not np.isfinite(info).all():
        raise SingularInformation("Observed information has non-finite entries")
    cond = np.linalg.cond(info)
    rcond = 0.0 if not np.isfinite(cond) or cond == 0 else 1.0 / cond
    if rcond < INFORMATION_RCOND:
        raise SingularInformation(f"Observed information is singular (rcond={rcond:.3g})")
    try:
        factor = linalg.cho_factor(info)
    except linalg.LinAlgError as exc:
        raise SingularInformation("Observed information is not positive definite") from exc
    cov = linalg.cho_solve(factor, np.eye(info.shape[0]))
    cov = 0.5 * (cov + cov.T)
    return cov, np.sqrt(np.diag(cov))


def attach_covariance(H_fn: Callable[[], np.ndarray], notes: dict, source: str) -> tuple[np.ndarray | None, np.ndarray | None]:
    try:
        cov, se = covariance_from_hessian(H_fn())
    except (SingularInformation, RhoOutOfBounds, SingularLag) as exc:
        logger.warning("Covariance omitted: %s", exc)
        notes["covariance"] = f"omitted: {exc}"
        return None, None
    notes["covariance"] = "inverse observed information"
    notes["covariance_source"] = source
    return cov, se


def initial_params(config: FitConfig, K: int, J: int, K_Z: int | None, spatial: bool) -> ModelParams:
    if config.init is None:
        return ModelParams.zeros(K, J, K_Z, spatial)
    init = config.init
    if init.beta.shape != (K, J):
        raise DimensionMismatch(f"init beta has shape {init.beta.shape}, expected {(K, J)}")
    if K_Z is not None and init.K_Z != K_Z:
        raise DimensionMismatch(f"init gamma has {init.K_Z} entries, expected {K_Z}")
    rho = (init.rho if init.rho is not None else 0.0) if spatial else None
    gamma = None if K_Z is None else init.gamma
    return ModelParams(init.beta, gamma, rho)


def fit_bounds(n_free: int, spatial: bool, config: FitConfig) -> list[tuple[float | None, float | None]]:
    bounds: list[tuple[float | None, float | None]] = [(None, None)] * n_free
    if spatial:
        bounds[-1] = config.rho_bounds
    return bounds


def fit_dirichlet(
    Y: CompositionMatrix | np.ndarray,
    X: np.ndarray,
    Z: np.ndarray,
    W: SpatialWeights | None = None,
    config: FitConfig | None = None,
    observed: np.ndarray | None = None,
) -> FitResult:
    """Maximum-likelihood Dirichlet regression, spatial when W is given.

    Rows with observed == False keep shaping M^-1 X through W but add nothing to
    the likelihood.
    """
    config = config or FitConfig()
    if not isinstance(Y, CompositionMatrix):
        Y = validate_composition(Y)
    Y, replaced = prepare_labels(Y, config.zero_replace)
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    n, J = Y.values.shape
    if X.shape[0] != n or Z.shape[0] != n:
        raise DimensionMismatch(f"Y has {n} rows, X has {X.shape[0]}, Z has {Z.shape[0]}")
    spatial = W is not None
    if spatial and W.n != n:
        raise DimensionMismatch(f"W is {W.n} x {W.n} for {n} observations")

    include_gamma = not config.common_parametrization
    if not include_gamma:
        Z = np.ones((n, 1))
    template = initial_params(config, X.shape[1], J, Z.shape[1], spatial)
    if not include_gamma:
        template = ModelParams(template.beta, np.zeros(1), template.rho)
    w = observation_weights(n, observed)

    def objective(theta: np.ndarray) -> tuple[float, np.ndarray]:
        params = template.with_free_vector(theta, include_gamma)
        if spatial:
            state = spatial_link(X, Z, W, params)
            return spatial_loglik(Y, state, w), spatial_free_gradient(Y, state, w, include_gamma)
        state = link(X, Z, params)
        terms = score_terms(Y, state)
        return loglik(Y, state, w), free_gradient(X, Z, terms, w, include_gamma)

    theta0 = template.free_vector(include_gamma)
    bounds = fit_bounds(theta0.size, spatial, config)
    logger.info(
        "Fitting %s Dirichlet model: n=%d, J=%d, K=%d, K_Z=%d, %d free parameters",
        "spatial" if spatial else "non-spatial", int(w.sum()), J, X.shape[1], Z.shape[1], theta0.size,
    )
    opt = maximize(objective, theta0, bounds, config)
    params_hat = template.with_free_vector(opt.x, include_gamma)

    notes = {
        "zero_replacement_applied": replaced,
        "zero_replacement_rule": f"mode={config.zero_replace}, auto triggers on any entry < 1e-12",
        "parameter_order": PARAMETER_ORDER,
        "common_parametrization": config.common_parametrization,
        "observations_used": int(np.count_nonzero(w)),
        "termination_message": opt.message,
        "projected_gradient_norm": opt.projected_gradient_norm,
        "n_evaluations": opt.n_evaluations,
        "rejected_trial_points": opt.n_rejected,
        "seed": config.seed,
    }
    if spatial:
        notes["weights"] = W.describe()
        notes["rho_identified"] = not W.is_empty()
        if W.is_empty():
            logger.warning("W has no nonzero entries; rho is not identified")

    cov, se = (None, None)
    if config.compute_covariance:
        def observed_hessian() -> np.ndarray:
            if spatial:
                return hessian_spatial(Y, spatial_link(X, Z, W, params_hat), w, include_gamma)
            state = link(X, Z, params_hat)
            return free_hessian(X, Z, score_terms(Y, state, curvature=True), w, include_gamma)

        cov, se = attach_covariance(observed_hessian, notes, "analytic_hessian")

    k = theta0.size
    result = FitResult(
        model="dirichlet",
        params=params_hat,
        loglik_hat=opt.value,
        aic=aic_value(opt.value, k),
        n_free=k,
        parameter_names=template.parameter_names(include_gamma),
        covariance=cov,
        std_errors=se,
        iterations=opt.iterations,
        converged=opt.converged,
        termination=opt.termination,
        objective_trace=opt.objective_trace,
        notes=notes,
    )
    log = logger.info if result.converged else logger.warning
    log("Dirichlet fit finished: loglik=%.6f, AIC=%.4f, %d iterations, termination=%s, converged=%s",
        result.loglik_hat, result.aic, result.iterations, result.termination, result.converged)
    return result


def predict(
    params: ModelParams,
    Xnew: np.ndarray,
    Znew: np.ndarray | None = None,
    weights: SpatialWeights | None = None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Predicted means (and precisions when Znew is given).

    Spatial prediction is in-sample only: weights must span exactly the rows of Xnew.
    """
    Xnew = np.asarray(Xnew, dtype=float)
    if Xnew.ndim != 2 or Xnew.shape[1] != params.K:
        raise DimensionMismatch(f"Xnew must have {params.K} columns, got shape {Xnew.shape}")
    Xeff = Xnew
    if params.rho is not None:
        if weights is None:
            raise MissingWeightsContext("Spatial prediction needs the weights matrix spanning the prediction rows")
        if weights.n != Xnew.shape[0]:
            raise DimensionMismatch(f"W is {weights.n} x {weights.n} but Xnew has {Xnew.shape[0]} rows")
        Xeff = lag_transform(weights, params.rho, Xnew)
    mu = link_mu(Xeff, params.beta)
    phi = None
    if Znew is not None and params.gamma is not None:
        Znew = np.asarray(Znew, dtype=float)
        if Znew.shape != (Xnew.shape[0], params.K_Z):
            raise DimensionMismatch(f"Znew must be {Xnew.shape[0]} x {params.K_Z}, got {Znew.shape}")
        phi = link_phi(Znew, params.gamma)
    return mu, phi
