"""Evaluation metrics for predicted compositions."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import xlogy

from util.errors import NonPositiveProbability, ShapeMismatch, ZeroRow, ZeroVariance

logger = logging.getLogger(__name__)


def _pair(Y, Yhat) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(getattr(Y, "values", Y), dtype=float)
    yhat = np.asarray(getattr(Yhat, "values", Yhat), dtype=float)
    if y.shape != yhat.shape:
        raise ShapeMismatch(y.shape, yhat.shape)
    return y, yhat


@dataclass
class R2Result:
    per_class: np.ndarray
    mean: float
    zero_variance_classes: list[int] = field(default_factory=list)


def r2(Y, Yhat) -> R2Result:
    """Per-class coefficient of determination and its mean over classes.

    Classes whose labels have zero variance get NaN and are left out of the mean.
    """
    y, yhat = _pair(Y, Yhat)
    ss_res = ((y - yhat) ** 2).sum(axis=0)
    ss_tot = ((y - y.mean(axis=0)) ** 2).sum(axis=0)
    flat = ss_tot == 0
    if flat.all():
        raise ZeroVariance(np.flatnonzero(flat).tolist())
    per_class = np.full(y.shape[1], np.nan)
    per_class[~flat] = 1.0 - ss_res[~flat] / ss_tot[~flat]
    zero_var = np.flatnonzero(flat).tolist()
    if zero_var:
        logger.warning("R2: classes %s have zero variance and are excluded from the mean", zero_var)
    return R2Result(per_class=per_class, mean=float(per_class[~flat].mean()), zero_variance_classes=zero_var)


def rmse(Y, Yhat) -> float:
    y, yhat = _pair(Y, Yhat)
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def cross_entropy_metric(Y, Yhat) -> float:
    """-(1/n) sum_ij y_ij ln yhat_ij."""
    y, yhat = _pair(Y, Yhat)
    bad = (yhat <= 0) & (y > 0)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise NonPositiveProbability(int(row), int(col))
    return float(-xlogy(y, yhat).sum() / y.shape[0])


def cosine_similarity(Y, Yhat) -> float:
    y, yhat = _pair(Y, Yhat)
    ny = np.linalg.norm(y, axis=1)
    nyhat = np.linalg.norm(yhat, axis=1)
    for norms in (ny, nyhat):
        zero = np.flatnonzero(norms == 0)
        if zero.size:
            raise ZeroRow(int(zero[0]))
    return float(np.mean((y * yhat).sum(axis=1) / (ny * nyhat)))


def aic(loglik_hat: float, k: int) -> float:
    return -2.0 * float(loglik_hat) + 2.0 * k


def map_assign(Yhat) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest class index."""
    return np.argmax(np.asarray(getattr(Yhat, "values", Yhat), dtype=float), axis=1)


def map_accuracy(Y, Yhat) -> float:
    """Share of rows whose predicted dominant class matches the observed one."""
    y, yhat = _pair(Y, Yhat)
    return float(np.mean(map_assign(y) == map_assign(yhat)))


@dataclass
class MetricsReport:
    r2_per_class: list[float]
    r2_mean: float
    rmse: float
    cross_entropy: float
    cosine_similarity: float
    aic: float | None = None
    map_accuracy: float | None = None
    zero_variance_classes: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["r2_per_class"] = [None if np.isnan(v) else v for v in self.r2_per_class]
        return data

    def scalar_items(self) -> dict[str, float]:
        items = {
            "r2_mean": self.r2_mean,
            "rmse": self.rmse,
            "cross_entropy": self.cross_entropy,
            "cosine_similarity": self.cosine_similarity,
        }
        if self.aic is not None:
            items["aic"] = self.aic
        if self.map_accuracy is not None:
            items["map_accuracy"] = self.map_accuracy
        return items


def evaluate(Y, Yhat, aic_value: float | None = None) -> MetricsReport:
    result = r2(Y, Yhat)
    return MetricsReport(
        r2_per_class=[float(v) for v in result.per_class],
        r2_mean=result.mean,
        rmse=rmse(Y, Yhat),
        cross_entropy=cross_entropy_metric(Y, Yhat),
        cosine_similarity=cosine_similarity(Y, Yhat),
        aic=aic_value,
        map_accuracy=map_accuracy(Y, Yhat),
        zero_variance_classes=result.zero_variance_classes,
    )
