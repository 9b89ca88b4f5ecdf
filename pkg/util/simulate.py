"""Synthetic spatial compositional datasets and Monte-Carlo replication studies.

Every random draw comes from a counter-based Philox stream keyed by
(seed, replication, stream), so replications can run in any order or in
parallel and still reproduce the same numbers.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd
from tqdm import tqdm

from util.compdata import CompositionMatrix, validate_composition
from util.dirichlet_core import ModelParams
from util.dirichlet_sar import spatial_link
from util.errors import ConfigError, NumericError
from util.metrics import MetricsReport, evaluate
from util.multinomial import TrialCounts, fit_multinomial
from util.optim import FitConfig, FitResult, fit_dirichlet, predict
from util.spatialw import SpatialWeights, build_band_weights

logger = logging.getLogger(__name__)

DIRICHLET_STUDY_BETA = ((0.0, 0.0, 0.1), (0.0, 1.0, -2.0), (0.0, -1.0, -2.0))
DIRICHLET_STUDY_GAMMA = (2.0, 3.0)
MULTINOMIAL_STUDY_BETA = ((0.0, -0.2, 0.1), (0.0, 2.0, -1.5), (0.0, 0.5, -2.0))

GENERATORS = ("dirichlet", "multinomial")
ESTIMATORS = ("dirichlet", "multinomial")
MODELS = ("spatial", "non_spatial")

STREAM_DESIGN = 0
STREAM_LABELS = 1
STREAM_TRIALS = 2
STREAM_TEST_DESIGN = 3

DESIGN_ASSUMPTIONS = {
    "X": "intercept + 2 independent N(0, 1) covariates",
    "Z": "intercept + 1 Uniform(0, 1) covariate",
    "W": "band weights, W_ij = 1/k for 1 <= |i-j| <= k, not row-normalized",
    "trial_counts": "drawn once per seed, shared by all replications",
}


def rng_stream(seed: int, replication: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(replication, stream))))


def sample_dirichlet(alpha, rng: np.random.Generator) -> np.ndarray:
    """Normalized Gamma(alpha_j, 1) draws; alpha may be one vector or a matrix of rows."""
    g = rng.standard_gamma(np.asarray(alpha, dtype=float))
    return g / g.sum(axis=-1, keepdims=True)


def sample_multinomial_proportions(n_i, p, rng: np.random.Generator) -> np.ndarray:
    """Multinomial counts over n_i trials divided by n_i; broadcasts over rows."""
    n_i = np.asarray(n_i)
    counts = rng.multinomial(n_i, np.asarray(p, dtype=float))
    return counts / (n_i[..., None] if n_i.ndim else n_i)


def _parse_matrix(text: str) -> tuple[tuple[float, ...], ...]:
    return tuple(tuple(float(v) for v in row.split(",")) for row in text.split(";") if row.strip())


@dataclass
class SyntheticConfig:
    n: int = 200
    rho_true: float = 0.5
    k_neighbors: int = 5
    beta_true: tuple = DIRICHLET_STUDY_BETA
    gamma_true: tuple = DIRICHLET_STUDY_GAMMA
    generator: str = "dirichlet"
    estimator: str = "dirichlet"
    trial_range: tuple[int, int] = (100, 10000)
    replications: int = 100
    seed: int = 0
    test_size: int = 1000
    use_trial_counts: bool = False
    fit: FitConfig = field(default_factory=lambda: FitConfig(compute_covariance=False))

    def __post_init__(self):
        self.beta_true = tuple(tuple(float(v) for v in row) for row in self.beta_true)
        self.gamma_true = tuple(float(v) for v in self.gamma_true)
        beta = self.beta
        if beta.ndim != 2 or beta.shape[0] != 3 or beta.shape[1] < 2:
            raise ConfigError(f"beta_true must be 3 x J (intercept + 2 covariates), got {beta.shape}")
        if np.any(beta[:, 0] != 0):
            raise ConfigError("beta_true column 0 must be zero")
        if len(self.gamma_true) != 2:
            raise ConfigError("gamma_true must have 2 entries (intercept + 1 covariate)")
        if self.generator not in GENERATORS:
            raise ConfigError(f"generator must be one of {GENERATORS}, got {self.generator!r}")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if not -1.0 <= self.rho_true <= 1.0:
            raise ConfigError(f"rho_true must lie in [-1, 1], got {self.rho_true}")
        if not 1 <= self.k_neighbors < self.n:
            raise ConfigError(f"k_neighbors must satisfy 1 <= k < n, got k={self.k_neighbors}, n={self.n}")
        lo, hi = self.trial_range
        if not 1 <= lo <= hi:
            raise ConfigError(f"trial_range must be ordered and >= 1, got {self.trial_range}")
        self.trial_range = (int(lo), int(hi))
        if self.replications < 1 or self.test_size <= self.k_neighbors:
            raise ConfigError("replications must be >= 1 and test_size > k_neighbors")

    @property
    def beta(self) -> np.ndarray:
        return np.asarray(self.beta_true, dtype=float)

    def truth(self, spatial: bool = True) -> ModelParams:
        return ModelParams(self.beta, np.asarray(self.gamma_true), self.rho_true if spatial else None)

    def replace(self, **changes) -> SyntheticConfig:
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update(changes)
        return SyntheticConfig(**data)

    @classmethod
    def multinomial_study(cls, **overrides) -> SyntheticConfig:
        base = {"generator": "multinomial", "beta_true": MULTINOMIAL_STUDY_BETA}
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_mapping(cls, mapping: dict[str, str | None]) -> SyntheticConfig:
        """Build from flat KEY=value pairs (as read by run_config.load_flat_config)."""
        casts = {
            "N": ("n", int),
            "RHO_TRUE": ("rho_true", float),
            "K_NEIGHBORS": ("k_neighbors", int),
            "BETA_TRUE": ("beta_true", _parse_matrix),
            "GAMMA_TRUE": ("gamma_true", lambda s: tuple(float(v) for v in s.split(","))),
            "GENERATOR": ("generator", str.strip),
            "ESTIMATOR": ("estimator", str.strip),
            "REPLICATIONS": ("replications", int),
            "SEED": ("seed", int),
            "TEST_SIZE": ("test_size", int),
            "USE_TRIAL_COUNTS": ("use_trial_counts", lambda s: s.strip().lower() in ("1", "true", "yes")),
        }
        kwargs: dict = {}
        trial = [100, 10000]
        for key, raw in mapping.items():
            key = key.upper()
            if raw is None:
                raise ConfigError(f"Config key {key} has no value")
            if key in ("TRIAL_MIN", "TRIAL_MAX"):
                try:
                    trial[0 if key == "TRIAL_MIN" else 1] = int(raw)
                except ValueError as exc:
                    raise ConfigError(f"Bad value for {key}: {raw!r}") from exc
                continue
            if key not in casts:
                raise ConfigError(f"Unknown config key {key}")
            name, cast = casts[key]
            try:
                kwargs[name] = cast(raw)
            except ValueError as exc:
                raise ConfigError(f"Bad value for {key}: {raw!r}") from exc
        kwargs["trial_range"] = tuple(trial)
        if kwargs.get("generator") == "multinomial" and "beta_true" not in kwargs:
            kwargs["beta_true"] = MULTINOMIAL_STUDY_BETA
        return cls(**kwargs)

    def describe(self) -> dict:
        data = asdict(self)
        data["fit"] = self.fit.to_dict()
        data["design_assumptions"] = DESIGN_ASSUMPTIONS
        return data


@dataclass
class SyntheticDataset:
    X: np.ndarray
    Z: np.ndarray
    weights: SpatialWeights
    Y: CompositionMatrix
    truth: ModelParams
    mu: np.ndarray
    phi: np.ndarray
    counts: TrialCounts | None = None


def _design(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    X = np.hstack([np.ones((n, 1)), rng.standard_normal((n, 2))])
    Z = np.hstack([np.ones((n, 1)), rng.uniform(0.0, 1.0, (n, 1))])
    return X, Z


def trial_counts(config: SyntheticConfig, n: int | None = None) -> TrialCounts:
    lo, hi = config.trial_range
    rng = rng_stream(config.seed, 0, STREAM_TRIALS)
    return TrialCounts(rng.integers(lo, hi, size=n or config.n, endpoint=True))


def generate_dataset(config: SyntheticConfig, replication: int) -> SyntheticDataset:
    """Draw (X, Z, W, Y) at the configured truth for one replication."""
    X, Z = _design(config.n, rng_stream(config.seed, replication, STREAM_DESIGN))
    W = build_band_weights(config.n, config.k_neighbors)
    truth = config.truth(spatial=True)
    state = spatial_link(X, Z, W, truth).base

    labels_rng = rng_stream(config.seed, replication, STREAM_LABELS)
    counts = None
    if config.generator == "dirichlet":
        values = sample_dirichlet(state.alpha, labels_rng)
    else:
        counts = trial_counts(config)
        values = sample_multinomial_proportions(counts.counts, state.mu, labels_rng)
    return SyntheticDataset(
        X=X, Z=Z, weights=W, Y=validate_composition(values), truth=truth,
        mu=state.mu, phi=state.phi, counts=counts,
    )


def generate_test_set(config: SyntheticConfig, replication: int = 0) -> SyntheticDataset:
    """Fresh test_size points at truth; Y holds the true means."""
    X, Z = _design(config.test_size, rng_stream(config.seed, replication, STREAM_TEST_DESIGN))
    W = build_band_weights(config.test_size, config.k_neighbors)
    truth = config.truth(spatial=True)
    state = spatial_link(X, Z, W, truth).base
    return SyntheticDataset(X=X, Z=Z, weights=W, Y=CompositionMatrix(state.mu), truth=truth, mu=state.mu, phi=state.phi)


def fit_model(config: SyntheticConfig, data: SyntheticDataset, spatial: bool) -> FitResult:
    W = data.weights if spatial else None
    if config.estimator == "dirichlet":
        return fit_dirichlet(data.Y, data.X, data.Z, W, config.fit)
    counts = data.counts if config.use_trial_counts else None
    return fit_multinomial(data.Y, data.X, W, counts, config.fit)


def estimation_errors(config: SyntheticConfig, fit: FitResult, spatial: bool) -> dict[str, float]:
    """theta_hat - theta_true for every parameter that has a true value."""
    truth = config.truth(spatial)
    if fit.params.gamma is None or config.generator != "dirichlet":
        truth = ModelParams(truth.beta, None, truth.rho)
    true_values = dict(zip(truth.parameter_names(), truth.free_vector()))
    estimates = dict(zip(fit.parameter_names, fit.estimates()))
    return {name: float(estimates[name] - value) for name, value in true_values.items() if name in estimates}


@dataclass
class ReplicationRecord:
    model: str
    n: int
    replication: int
    converged: bool
    errors: dict[str, float]
    termination: str = ""


def replicate_once(config: SyntheticConfig, replication: int, models: tuple[str, ...] = MODELS) -> list[ReplicationRecord]:
    data = generate_dataset(config, replication)
    records = []
    for model in models:
        spatial = model == "spatial"
        try:
            fit = fit_model(config, data, spatial)
        except NumericError as exc:
            logger.warning("Replication %d (%s, n=%d) failed: %s", replication, model, config.n, exc)
            records.append(ReplicationRecord(model, config.n, replication, False, {}, f"error: {exc}"))
            continue
        records.append(
            ReplicationRecord(model, config.n, replication, fit.converged,
                              estimation_errors(config, fit, spatial), fit.termination)
        )
    return records


@dataclass
class ReplicationTable:
    records: list[ReplicationRecord]
    metadata: dict = field(default_factory=dict)

    def merge(self, other: ReplicationTable) -> ReplicationTable:
        records = sorted(self.records + other.records, key=lambda r: (r.model, r.n, r.replication))
        runs = self.metadata.get("runs", []) + other.metadata.get("runs", [])
        return ReplicationTable(records, {**self.metadata, **other.metadata, "runs": runs})

    def errors_frame(self) -> pd.DataFrame:
        rows = [
            {"model": r.model, "n": r.n, "replication": r.replication, "parameter": name, "error": err}
            for r in self.records if r.converged
            for name, err in r.errors.items()
        ]
        return pd.DataFrame(rows, columns=["model", "n", "replication", "parameter", "error"])

    def summary(self) -> pd.DataFrame:
        """Bias, SD (divisor reps - 1, 0 for a single replication) and MSE per parameter."""
        frame = self.errors_frame().sort_values(["model", "n", "parameter", "replication"])
        grouped = frame.groupby(["model", "n", "parameter"], sort=True)["error"]
        table = pd.DataFrame({
            "bias": grouped.mean(),
            "sd": grouped.std(ddof=1).fillna(0.0),
            "mse": grouped.apply(lambda e: float(np.mean(np.square(e)))),
            "count": grouped.size(),
        })
        return table.reset_index()

    def non_converged(self) -> pd.DataFrame:
        frame = pd.DataFrame(
            [{"model": r.model, "n": r.n, "failed": not r.converged} for r in self.records],
            columns=["model", "n", "failed"],
        )
        return frame.groupby(["model", "n"], sort=True)["failed"].sum().astype(int).reset_index()

    def render(self) -> str:
        """Text table in the 'bias (SD) [MSE]' layout, one column per (model, n)."""
        summary = self.summary()
        if summary.empty:
            return "(no converged replications)"
        summary["cell"] = summary.apply(lambda r: f"{r.bias:.3f} ({r.sd:.3f}) [{r.mse:.3f}]", axis=1)
        pivot = summary.pivot(index="parameter", columns=["model", "n"], values="cell").fillna("")
        return pivot.to_string()

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        self.summary().to_csv(path, index=False, float_format="%.10g")
        return path

    def to_json(self, path: str | Path) -> Path:
        path = Path(path)
        payload = {
            "schema_version": 1,
            "metadata": self.metadata,
            "rows": self.summary().to_dict(orient="records"),
            "non_converged": self.non_converged().to_dict(orient="records"),
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default), encoding="utf-8")
        return path


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"Not JSON serializable: {type(value).__name__}")


def run_replication_study(
    config: SyntheticConfig,
    jobs: int = 1,
    models: tuple[str, ...] = MODELS,
    progress: bool = False,
) -> ReplicationTable:
    """Generate, fit and record estimation errors for every replication."""
    logger.info(
        "Replication study: %d reps, n=%d, rho=%.3g, generator=%s, estimator=%s, jobs=%d",
        config.replications, config.n, config.rho_true, config.generator, config.estimator, jobs,
    )
    records: list[ReplicationRecord] = []
    with tqdm(total=config.replications, disable=not progress, desc=f"n={config.n}") as bar:
        if jobs <= 1:
            for rep in range(config.replications):
                records.extend(replicate_once(config, rep, models))
                bar.update(1)
        else:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                futures = [pool.submit(replicate_once, config, rep, models) for rep in range(config.replications)]
                for future in as_completed(futures):
                    records.extend(future.result())
                    bar.update(1)

    records.sort(key=lambda r: (r.model, r.n, r.replication))
    failed = sum(not r.converged for r in records)
    if failed:
        logger.warning("%d of %d fits did not converge and are excluded", failed, len(records))
    metadata = {"runs": [config.describe()]}
    return ReplicationTable(records, metadata)


def run_prediction_study(
    config: SyntheticConfig,
    fits: dict[str, FitResult] | None = None,
    jobs: int = 1,
) -> dict[str, MetricsReport]:
    """Compare true means with predicted means on a fresh test set."""
    if fits is None:
        data = generate_dataset(config, 0)
        if jobs <= 1:
            fits = {model: fit_model(config, data, model == "spatial") for model in MODELS}
        else:
            with ProcessPoolExecutor(max_workers=min(jobs, len(MODELS))) as pool:
                futures = {model: pool.submit(fit_model, config, data, model == "spatial") for model in MODELS}
                fits = {model: future.result() for model, future in futures.items()}
    test = generate_test_set(config)
    reports: dict[str, MetricsReport] = {}
    for model, fit in fits.items():
        weights = test.weights if fit.params.rho is not None else None
        mu_hat, _ = predict(fit.params, test.X, weights=weights)
        reports[model] = evaluate(test.mu, mu_hat)
        logger.info("Prediction study %s: R2=%.4f, RMSE=%.4f", model, reports[model].r2_mean, reports[model].rmse)
    reports["perfect_information"] = evaluate(test.mu, test.mu)
    return reports
