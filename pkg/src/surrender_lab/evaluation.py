"""Frequentist and probabilistic assessment of surrender classifiers."""
from __future__ import annotations

import csv
import logging
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from statistics import NormalDist

import numpy as np

from .classifiers.base import PROBA_CLAMP

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _labels_and_scores(labels, scores):
    y = np.asarray(labels)
    s = np.asarray(scores, dtype=float)
    if y.size == 0:
        raise ValueError("empty input")
    if y.shape != s.shape:
        raise ValueError("labels and probabilities differ in length")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary 0/1")
    return y.astype(np.int64), s


def confusion_matrix(labels, probabilities, threshold: float = 0.5) -> ConfusionMatrix:
    """Counts for label predictions ``1{p >= threshold}``."""
    y, p = _labels_and_scores(labels, probabilities)
    pred = p >= threshold
    pos = y == 1
    return ConfusionMatrix(int(np.sum(pred & pos)), int(np.sum(pred & ~pos)),
                           int(np.sum(~pred & pos)), int(np.sum(~pred & ~pos)))


def _ratio(num, den):
    return None if den == 0 else num / den


def metrics_from_counts(cm: ConfusionMatrix, beta: float = 1.0) -> dict:
    """Accuracy, precision, recall, specificity, fpr and F_beta.

    Ratios with a zero denominator are ``None`` (absent), never 0.
    F_beta uses the canonical ``(1 + b^2) P R / (b^2 P + R)``.
    """
    precision = _ratio(cm.tp, cm.tp + cm.fp)
    recall = _ratio(cm.tp, cm.tp + cm.fn)
    if precision is None or recall is None:
        f_beta = None
    else:
        f_beta = _ratio((1 + beta**2) * precision * recall, beta**2 * precision + recall)
    return {
        "accuracy": _ratio(cm.tp + cm.tn, cm.n),
        "precision": precision,
        "recall": recall,
        "specificity": _ratio(cm.tn, cm.tn + cm.fp),
        "fpr": _ratio(cm.fp, cm.fp + cm.tn),
        "f_beta": f_beta,
    }


def confusion_metrics(labels, probabilities, threshold: float = 0.5, beta: float = 1.0) -> dict:
    return metrics_from_counts(confusion_matrix(labels, probabilities, threshold), beta)


def _sweep(labels, scores):
    """Cumulative true/false positives when thresholding at each distinct score (descending)."""
    y, s = _labels_and_scores(labels, scores)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise ValueError("both classes must be present")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), y.size - 1]
    tps = np.cumsum(y)[last].astype(float)
    fps = (last + 1 - tps).astype(float)
    return tps, fps, s[last], n_pos, y.size - n_pos


def roc_points(labels, scores):
    """``(fpr, tpr, thresholds)`` from (0, 0) to (1, 1), one point per distinct score."""
    tps, fps, thr, n_pos, n_neg = _sweep(labels, scores)
    fpr = np.r_[0.0, fps / n_neg]
    tpr = np.r_[0.0, tps / n_pos]
    return fpr, tpr, np.r_[np.inf, thr]


def pr_points(labels, scores):
    """``(recall, precision, thresholds)``, starting at recall 0 with precision 1."""
    tps, fps, thr, n_pos, _ = _sweep(labels, scores)
    precision = tps / (tps + fps)
    return np.r_[0.0, tps / n_pos], np.r_[1.0, precision], np.r_[np.inf, thr]


def auc(x, y) -> float:
    """Trapezoid area under a curve given by points sorted along ``x``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def roc_auc(labels, scores) -> float:
    fpr, tpr, _ = roc_points(labels, scores)
    return auc(fpr, tpr)


def pr_auc(labels, scores) -> float:
    recall, precision, _ = pr_points(labels, scores)
    return auc(recall, precision)


def cross_entropy(labels, probabilities) -> float:
    """Mean binary cross-entropy with probabilities clamped to ``[1e-12, 1 - 1e-12]``."""
    y, p = _labels_and_scores(labels, probabilities)
    p = np.clip(p, PROBA_CLAMP, 1.0 - PROBA_CLAMP)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def latent_error_stats(true_p, predicted_p) -> dict:
    """Errors against the latent surrender probability.

    ``mae`` is the mean of ``|p - p_hat|``; ``var`` is the variance of
    ``p - p_hat`` and ``var_abs`` that of the absolute error;
    ``mean_signed`` is the mean of ``p_hat - p`` (positive means
    overestimation).
    """
    p = np.asarray(true_p, dtype=float)
    q = np.asarray(predicted_p, dtype=float)
    if p.shape != q.shape:
        raise ValueError("true and predicted probabilities differ in length")
    if p.size == 0:
        raise ValueError("empty input")
    err = p - q
    return {"mae": float(np.mean(np.abs(err))), "var": float(np.var(err)),
            "var_abs": float(np.var(np.abs(err))), "mean_signed": float(np.mean(-err))}


def z_quantile(alpha: float) -> float:
    """Two-sided standard-normal quantile for confidence level ``alpha``."""
    if not 0 < alpha < 1:
        raise ValueError("confidence level must lie in (0, 1)")
    return NormalDist().inv_cdf(0.5 + alpha / 2.0)


def confidence_band(predicted_p, alpha: float = 0.95):
    """``(point, lower, upper)`` for the mean of independent Bernoulli events.

    ``point`` is the mean prediction.  The half-width is
    ``z * sqrt(sum p(1-p)) / sqrt(N (N - 1))``, with ``z`` the two-sided
    quantile for confidence level ``alpha``.  Bounds may leave [0, 1].
    """
    p = np.asarray(predicted_p, dtype=float)
    n = p.size
    if n < 2:
        raise ValueError("a confidence band needs at least two predictions")
    if np.any((p < 0) | (p > 1)):
        raise ValueError("predictions must lie in [0, 1]")
    point = float(p.mean())
    half = float(z_quantile(alpha) * np.sqrt(np.sum(p * (1.0 - p))) / np.sqrt(n * (n - 1.0)))
    return point, point - half, point + half


@dataclass(frozen=True)
class BandPoint:
    calendar_year: int
    point_estimate: float
    lower: float
    upper: float
    observed_rate: float
    n: int

    @property
    def covers_observed(self) -> bool:
        return self.lower <= self.observed_rate <= self.upper


BAND_COLUMNS = ["calendar_year", "point", "lower", "upper", "observed", "n"]


def band_series(years, labels, predicted_p, alpha: float = 0.95) -> list[BandPoint]:
    """One confidence band per calendar year, with the observed surrender rate."""
    years = np.asarray(years, dtype=np.int64)
    y = np.asarray(labels, dtype=float)
    p = np.asarray(predicted_p, dtype=float)
    if not (years.shape == y.shape == p.shape):
        raise ValueError("years, labels and predictions differ in length")
    out = []
    for year in np.unique(years):
        mask = years == year
        n = int(mask.sum())
        if n < 2:
            logger.warning("calendar year %d has %d record(s); skipped", year, n)
            continue
        point, lo, hi = confidence_band(p[mask], alpha)
        out.append(BandPoint(int(year), float(point), float(lo), float(hi), float(y[mask].mean()), n))
    return out


def dataset_band_series(dataset, predicted_p, alpha: float = 0.95) -> list[BandPoint]:
    return band_series(dataset.years, dataset.y, predicted_p, alpha)


def write_bands(points, path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(BAND_COLUMNS)
        for pt in points:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in astuple(pt)])
    return path


def read_bands(path) -> list[BandPoint]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [BandPoint(int(r["calendar_year"]), float(r["point"]), float(r["lower"]),
                      float(r["upper"]), float(r["observed"]), int(r["n"])) for r in rows]


def pp_scatter_export(true_p, predicted_p, path) -> Path:
    """Two-column CSV of latent versus predicted probabilities, one row per record."""
    p = np.asarray(true_p, dtype=float)
    q = np.asarray(predicted_p, dtype=float)
    if p.shape != q.shape:
        raise ValueError("true and predicted probabilities differ in length")
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true_p", "predicted_p"])
        writer.writerows(zip(map(repr, p.tolist()), map(repr, q.tolist())))
    return path


def evaluate_predictions(labels, predicted_p, true_p=None, thresholds=(0.5,),
                         beta: float = 1.0) -> dict:
    """All report columns for one (model, split) pair.

    Threshold metrics are keyed ``accuracy@0.5`` etc.  Latent statistics are
    ``None`` when ``true_p`` is unavailable; curve areas are ``None`` for
    single-class data.
    """
    y, p = _labels_and_scores(labels, predicted_p)
    row = {"n": int(y.size), "observed_rate": float(y.mean()), "mean_prediction": float(p.mean()),
           "cross_entropy": cross_entropy(y, p)}
    for t in thresholds:
        for key, value in confusion_metrics(y, p, t, beta).items():
            row[f"{key}@{t:g}"] = value
    try:
        row["roc_auc"], row["pr_auc"] = roc_auc(y, p), pr_auc(y, p)
    except ValueError:
        row["roc_auc"] = row["pr_auc"] = None
    stats = (latent_error_stats(true_p, p) if true_p is not None
             else dict.fromkeys(("mae", "var", "var_abs", "mean_signed")))
    row.update(stats)
    return row


BAND_FIELDS = [f.name for f in fields(BandPoint)]
