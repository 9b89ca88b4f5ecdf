"""CSV ingestion for features, labels, counts and weights, plus the LOOCV driver.

All files are UTF-8 CSV with '.' as decimal point. Feature, label, count and
coordinate files carry a header row; dense weights files do not. A
coordinate-list weights file starts with the header ``i,j,w`` and uses
0-based indices.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.model_selection import LeaveOneOut

from util.compdata import (
    ROW_SUM_TOLERANCE,
    CompositionMatrix,
    DesignPair,
    prepare_labels,
    validate_composition,
)
from util.errors import (
    ConfigError,
    DimensionMismatch,
    InputError,
    NumericError,
    ParseError,
    RowCountMismatch,
    RowSumViolation,
    ZeroVariance,
)
from util.metrics import MetricsReport, evaluate
from util.multinomial import TrialCounts, fit_multinomial
from util.optim import FitConfig, FitResult, fit_dirichlet, predict
from util.spatialw import SpatialWeights, row_normalize
from util.validation import CountValidator, RealValidator
from util.weights_spec import build_from_spec, parse_weights_spec

logger = logging.getLogger(__name__)

LABEL_SCALES = ("unit", "percent")
MODELS = ("dirichlet", "multinomial")
# Largest |row sum - 1| that row closure will repair; published tables round to 3 decimals.
CLOSURE_TOLERANCE = 0.01
MANIFEST_KEYS = ("FEATURES", "LABELS", "COORDS", "PRECISION")
COORDINATE_LIST_HEADER = ["i", "j", "w"]


def _split_columns(value: str | None) -> list[str]:
    if not value:
        return []
    return [name.strip() for name in value.split(",") if name.strip()]


@dataclass
class ColumnManifest:
    """Column roles inside a combined CSV file."""

    features: list[str] = field(default_factory=list)
    labels: list[str] = field(default_factory=list)
    coords: list[str] = field(default_factory=list)
    precision: list[str] = field(default_factory=list)

    @staticmethod
    def from_mapping(values: dict[str, str | None]) -> ColumnManifest:
        unknown = sorted(set(values) - set(MANIFEST_KEYS))
        if unknown:
            raise ConfigError(f"Unknown manifest keys: {unknown}")
        manifest = ColumnManifest(
            features=_split_columns(values.get("FEATURES")),
            labels=_split_columns(values.get("LABELS")),
            coords=_split_columns(values.get("COORDS")),
            precision=_split_columns(values.get("PRECISION")),
        )
        if not manifest.features:
            raise ConfigError("Manifest must name at least one FEATURES column")
        return manifest

    def all_columns(self) -> set[str]:
        return set(self.features) | set(self.labels) | set(self.coords) | set(self.precision)


@dataclass
class DatasetBundle:
    """File paths for one dataset.

    With a manifest, labels/coords/precision columns may live in the features
    file; labels_path and coords_path are then optional. weights is a weights
    file or a builder spec (knn:k, invdist:cutoff, band:k) and is resolved
    against the loaded row count and coordinates.
    """

    features_path: Path
    labels_path: Path | None = None
    weights: str | None = None
    precision_path: Path | None = None
    coords_path: Path | None = None
    counts_path: Path | None = None
    manifest: ColumnManifest | None = None
    row_normalize_weights: bool = False

@dataclass
class LoadedDataset:
    Y: CompositionMatrix
    features: np.ndarray
    feature_names: list[str]
    label_names: list[str]
    precision: np.ndarray | None = None
    coords: np.ndarray | None = None
    counts: TrialCounts | None = None
    label_closure: LabelClosure | None = None
    weights: SpatialWeights | None = None

    @property
    def n(self) -> int:
        return self.Y.n


def _read_frame(path: str | Path, header: bool = True) -> pd.DataFrame:
    path = Path(path)
    try:
        return pd.read_csv(
            path,
            dtype=str,
            keep_default_na=False,
            header=0 if header else None,
            encoding="utf-8",
            skipinitialspace=True,
        )
    except FileNotFoundError as exc:
        raise InputError(f"File not found: {path}") from exc
    except (pd.errors.EmptyDataError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise InputError(f"Cannot read CSV {path}: {exc}") from exc


def _convert(frame: pd.DataFrame, validator, path: str | Path) -> np.ndarray:
    """Validate every cell; the first failure raises ParseError with its location."""
    out = np.empty(frame.shape, dtype=validator.field_type)
    for j, column in enumerate(frame.columns):
        for i, value in enumerate(frame[column].tolist()):
            if not validator.is_valid(value):
                raise ParseError(i, str(column), value, str(path))
            out[i, j] = validator.convert(value)
    return out


def ingest_csv(path: str | Path, columns: list[str] | None = None) -> tuple[np.ndarray, list[str]]:
    """Read selected (default: all) columns of a headed CSV as a finite float matrix."""
    frame = _read_frame(path)
    if columns:
        missing = [c for c in columns if c not in frame.columns]
        if missing:
            raise ConfigError(f"Columns {missing} not found in {path}; available: {list(frame.columns)}")
        frame = frame[columns]
    if frame.shape[1] == 0:
        raise InputError(f"{path} has no columns")
    values = _convert(frame, RealValidator(), path)
    logger.debug("Read %d x %d matrix from %s", values.shape[0], values.shape[1], path)
    return values, [str(c) for c in frame.columns]


@dataclass
class LabelClosure:
    rows_closed: int
    max_deviation: float
    tolerance: float = CLOSURE_TOLERANCE

    def to_dict(self) -> dict:
        return {
            "rule": "each label row divided by its sum",
            "rows_closed": self.rows_closed,
            "max_deviation": self.max_deviation,
            "tolerance": self.tolerance,
        }


def close_rows(values: np.ndarray, tolerance: float = CLOSURE_TOLERANCE) -> tuple[np.ndarray, LabelClosure]:
    """Divide each row by its sum; rows further than tolerance from 1 raise RowSumViolation."""
    values = np.asarray(values, dtype=float)
    sums = values.sum(axis=1)
    deviation = sums - 1.0
    bad = np.flatnonzero(~(np.abs(deviation) <= tolerance))
    if bad.size:
        row = int(bad[0])
        raise RowSumViolation(row, float(deviation[row]))
    closure = LabelClosure(
        rows_closed=int(np.count_nonzero(np.abs(deviation) > ROW_SUM_TOLERANCE)),
        max_deviation=float(np.max(np.abs(deviation))) if deviation.size else 0.0,
        tolerance=tolerance,
    )
    return values / sums[:, None], closure


def _read_labels(
    path: str | Path,
    columns: list[str] | None,
    scale: str,
    close: bool,
) -> tuple[CompositionMatrix, list[str], LabelClosure | None]:
    if scale not in LABEL_SCALES:
        raise ConfigError(f"labels scale must be one of {LABEL_SCALES}, got {scale!r}")
    values, names = ingest_csv(path, columns)
    if scale == "percent":
        values = values / 100.0
    closure = None
    if close:
        values, closure = close_rows(values)
        logger.info(
            "Closed %d of %d label rows in %s (max |sum - 1| = %.3g)",
            closure.rows_closed, values.shape[0], path, closure.max_deviation,
        )
    return validate_composition(values), names, closure


def ingest_labels(
    path: str | Path,
    columns: list[str] | None = None,
    scale: str = "unit",
    close: bool = False,
) -> tuple[CompositionMatrix, list[str]]:
    """Labels routed through validate_composition.

    'percent' rows summing to 100 are divided by 100. With close=True, rows whose
    sum misses 1 by at most CLOSURE_TOLERANCE (rounded published tables) are
    divided by their sum first.
    """
    Y, names, _ = _read_labels(path, columns, scale, close)
    return Y, names


def ingest_counts(path: str | Path, column: str | None = None) -> TrialCounts:
    frame = _read_frame(path)
    if column is not None:
        if column not in frame.columns:
            raise ConfigError(f"Column {column!r} not found in {path}")
        frame = frame[[column]]
    if frame.shape[1] != 1:
        raise InputError(f"Trial counts file {path} must have exactly one column, got {frame.shape[1]}")
    return TrialCounts(_convert(frame, CountValidator(), path)[:, 0])


def _read_coordinate_list(frame: pd.DataFrame, n: int, path: str | Path) -> np.ndarray:
    body = frame.iloc[1:].reset_index(drop=True)
    body.columns = COORDINATE_LIST_HEADER
    triples = _convert(body, RealValidator(), path)
    W = np.zeros((n, n))
    seen: dict[tuple[int, int], int] = {}
    for row, (i, j, w) in enumerate(triples):
        for col, index in (("i", i), ("j", j)):
            if index != int(index):
                raise ParseError(row, col, str(index), str(path))
            if not 0 <= index < n:
                raise DimensionMismatch(f"Index {int(index)} at row {row} of {path} is outside 0..{n - 1}")
        key = (int(i), int(j))
        if key in seen:
            logger.warning("Duplicate weight entry %s at rows %d and %d of %s; keeping the last", key, seen[key], row, path)
        seen[key] = row
        W[key] = w
    return W


def ingest_weights(
    spec_or_path: str,
    n: int,
    coords: np.ndarray | None = None,
    normalize: bool = False,
) -> SpatialWeights:
    """Weights from a builder spec (knn:k, invdist:cutoff, band:k) or a CSV file."""
    if parse_weights_spec(spec_or_path) is not None:
        W = build_from_spec(spec_or_path, n, coords)
    else:
        path = Path(spec_or_path)
        frame = _read_frame(path, header=False)
        first = [str(v).strip().lower() for v in frame.iloc[0].tolist()] if len(frame) else []
        if first == COORDINATE_LIST_HEADER:
            matrix = _read_coordinate_list(frame, n, path)
            fmt = "coordinate list"
        else:
            matrix = _convert(frame, RealValidator(), path)
            fmt = "dense"
        W = SpatialWeights(matrix, row_normalized=False, construction="user_supplied")
        if W.n != n:
            raise DimensionMismatch(f"Weights in {path} are {W.n} x {W.n} for {n} observations")
        logger.info("Read %s weights (%d x %d) from %s", fmt, n, n, path)
    if normalize and not W.row_normalized:
        W = row_normalize(W)
    return W


def check_row_counts(counts: dict[str, int]) -> int:
    if len(set(counts.values())) > 1:
        raise RowCountMismatch(counts)
    return next(iter(counts.values()))


def _check_manifest_coverage(path: Path, manifest: ColumnManifest) -> None:
    header = list(_read_frame(path).columns)
    uncovered = [c for c in header if c not in manifest.all_columns()]
    if uncovered:
        raise ConfigError(f"Manifest does not assign a role to columns {uncovered} of {path}")


def load_bundle(bundle: DatasetBundle, labels_scale: str = "unit", close_rows: bool = False) -> LoadedDataset:
    manifest = bundle.manifest
    if manifest is not None:
        _check_manifest_coverage(bundle.features_path, manifest)
        features, feature_names = ingest_csv(bundle.features_path, manifest.features)
    else:
        features, feature_names = ingest_csv(bundle.features_path)

    if bundle.labels_path is not None:
        Y, label_names, closure = _read_labels(bundle.labels_path, None, labels_scale, close_rows)
    elif manifest is not None and manifest.labels:
        Y, label_names, closure = _read_labels(bundle.features_path, manifest.labels, labels_scale, close_rows)
    else:
        raise ConfigError("No labels: pass a labels file or name LABELS columns in the manifest")

    rows = {"features": features.shape[0], "labels": Y.n}
    precision = coords = counts = None
    if bundle.precision_path is not None:
        precision, _ = ingest_csv(bundle.precision_path)
        rows["precision"] = precision.shape[0]
    elif manifest is not None and manifest.precision:
        precision, _ = ingest_csv(bundle.features_path, manifest.precision)
    if bundle.coords_path is not None:
        coords, _ = ingest_csv(bundle.coords_path)
        rows["coords"] = coords.shape[0]
    elif manifest is not None and manifest.coords:
        coords, _ = ingest_csv(bundle.features_path, manifest.coords)
    if bundle.counts_path is not None:
        counts = ingest_counts(bundle.counts_path)
        rows["counts"] = counts.n
    n = check_row_counts(rows)
    weights = None
    if bundle.weights is not None:
        weights = ingest_weights(bundle.weights, n, coords, bundle.row_normalize_weights)
    logger.info("Loaded dataset: n=%d, %d features, %d classes", n, features.shape[1], Y.J)
    return LoadedDataset(
        Y, features, feature_names, label_names, precision, coords, counts, label_closure=closure, weights=weights,
    )


def polynomial_features(features: np.ndarray, order: int = 1) -> np.ndarray:
    """Append element-wise powers 2..order of every feature column."""
    if order < 1:
        raise ConfigError(f"Polynomial order must be >= 1, got {order}")
    features = np.asarray(features, dtype=float)
    if features.ndim == 1:
        features = features[:, None]
    return np.hstack([features**power for power in range(1, order + 1)])


# --- leave-one-out cross-validation -------------------------------------------

@dataclass
class FoldResult:
    fold: int
    held_out: int
    prediction: list[float]
    metrics: MetricsReport | None
    converged: bool
    termination: str
    loglik_hat: float | None = None

    @property
    def ok(self) -> bool:
        return self.metrics is not None


@dataclass
class _FoldTask:
    fold: int
    held_out: int
    model: str
    Y: CompositionMatrix
    Y_fit: CompositionMatrix
    design: DesignPair
    weights: SpatialWeights | None
    counts: TrialCounts | None
    config: FitConfig


def _fit(task: _FoldTask, rows: np.ndarray | None, observed: np.ndarray | None) -> FitResult:
    Y, design, counts = task.Y_fit, task.design, task.counts
    if rows is not None:
        Y, design = Y.subset(rows), design.subset(rows)
        counts = None if counts is None else TrialCounts(counts.counts[rows])
    if task.model == "dirichlet":
        return fit_dirichlet(Y, design.X, design.Z, task.weights, task.config, observed)
    return fit_multinomial(Y, design.X, task.weights, counts, task.config, observed)


def _run_fold(task: _FoldTask) -> FoldResult:
    n = task.Y.n
    try:
        if task.weights is not None:
            observed = np.ones(n, dtype=bool)
            observed[task.held_out] = False
            fit = _fit(task, None, observed)
        else:
            fit = _fit(task, np.delete(np.arange(n), task.held_out), None)
        mu, _ = predict(fit.params, task.design.X, weights=task.weights)
    except NumericError as exc:
        logger.warning("LOOCV fold %d (row %d) failed: %s", task.fold, task.held_out, exc)
        return FoldResult(task.fold, task.held_out, [], None, False, f"error: {exc}")
    return FoldResult(
        fold=task.fold,
        held_out=task.held_out,
        prediction=mu[task.held_out].tolist(),
        metrics=evaluate(task.Y, mu, fit.aic),
        converged=fit.converged,
        termination=fit.termination,
        loglik_hat=fit.loglik_hat,
    )


@dataclass
class LoocvReport:
    folds: list[FoldResult]
    pooled: MetricsReport | None
    label_names: list[str]
    metadata: dict = field(default_factory=dict)

    def fold_frame(self) -> pd.DataFrame:
        rows = []
        for f in self.folds:
            row = {"fold": f.fold, "held_out": f.held_out, "converged": f.converged, "termination": f.termination}
            if f.metrics is not None:
                row.update(f.metrics.scalar_items())
            rows.append(row)
        return pd.DataFrame(rows)

    def summary_frame(self) -> pd.DataFrame:
        """Mean and per-fold SD (ddof=1) of each metric over successful folds."""
        frame = self.fold_frame()
        metrics = [c for c in frame.columns if c not in ("fold", "held_out", "converged", "termination")]
        if not metrics:
            return pd.DataFrame(columns=["metric", "mean", "sd"])
        stats = frame[metrics].agg(["mean", "std"]).T.reset_index()
        stats.columns = ["metric", "mean", "sd"]
        stats["sd"] = stats["sd"].fillna(0.0)
        return stats

    def predictions_frame(self) -> pd.DataFrame:
        rows = [
            {"held_out": f.held_out, **dict(zip(self.label_names, f.prediction))}
            for f in self.folds if f.prediction
        ]
        return pd.DataFrame(rows, columns=["held_out", *self.label_names])

    def render(self) -> str:
        lines = [f"{r.metric:<18} {r.mean:.4f} ({r.sd:.4f})" for r in self.summary_frame().itertuples()]
        failed = sum(not f.ok for f in self.folds)
        if failed:
            lines.append(f"{failed} of {len(self.folds)} folds failed")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "metadata": self.metadata,
            "summary": self.summary_frame().to_dict(orient="records"),
            "folds": self.fold_frame().to_dict(orient="records"),
            "pooled": None if self.pooled is None else self.pooled.to_dict(),
        }


def run_loocv(
    Y: CompositionMatrix,
    design: DesignPair,
    weights: SpatialWeights | None = None,
    model: str = "dirichlet",
    config: FitConfig | None = None,
    counts: TrialCounts | None = None,
    jobs: int = 1,
    label_names: list[str] | None = None,
) -> LoocvReport:
    """Leave each row out in turn, refit and predict it.

    Spatial folds keep the full W and drop only the held-out label from the
    likelihood; non-spatial folds drop the row.
    """
    if model not in MODELS:
        raise ConfigError(f"model must be one of {MODELS}, got {model!r}")
    if design.n != Y.n:
        raise DimensionMismatch(f"Y has {Y.n} rows but the design has {design.n}")
    config = config or FitConfig()
    if model == "dirichlet":
        Y_fit, replaced = prepare_labels(Y, config.zero_replace)
    else:
        Y_fit, replaced = Y, False
    fold_config = replace(config, zero_replace="off", compute_covariance=False)

    tasks = [
        _FoldTask(fold, int(test[0]), model, Y, Y_fit, design, weights, counts, fold_config)
        for fold, (_, test) in enumerate(LeaveOneOut().split(design.X))
    ]
    logger.info("LOOCV: %d folds, model=%s, spatial=%s, jobs=%d", len(tasks), model, weights is not None, jobs)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            folds = list(pool.map(_run_fold, tasks))
    else:
        folds = [_run_fold(task) for task in tasks]

    good = [f for f in folds if f.ok]
    pooled = None
    if len(good) > 1:
        held = np.array([f.held_out for f in good])
        try:
            pooled = evaluate(Y.values[held], np.array([f.prediction for f in good]))
        except ZeroVariance:
            logger.warning("Pooled held-out labels have no variance; pooled metrics omitted")
    metadata = {
        "model": model,
        "spatial": weights is not None,
        "n": Y.n,
        "zero_replacement_applied": replaced,
        "fold_metrics": "metrics over all rows at the fold's refitted parameters; AIC of the fold fit",
        "sd": "per-fold standard deviation, ddof=1",
        "spatial_folds": "full W kept, held-out label masked from the likelihood",
        "failed_folds": len(folds) - len(good),
        "non_converged_folds": sum(f.ok and not f.converged for f in folds),
    }
    if weights is not None:
        metadata["weights"] = weights.describe()
    names = label_names or [f"class_{j}" for j in range(Y.J)]
    return LoocvReport(folds, pooled, names, metadata)
