"""Consistent resampling schemes and the bias they induce on confidence predictions.

The resamplers follow the ``fit_resample(X, y)`` convention.  Retained
original rows come first in their original order; duplicated or synthetic
minority rows are appended, flagged in ``synthetic_``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.utils.validation import check_is_fitted, check_X_y

from .surrender import Dataset

SCHEMES = ("random_undersample", "random_oversample", "smote")


@dataclass(frozen=True)
class ResamplePlan:
    scheme: str = "random_undersample"
    target_minority_share: float = 0.5
    smote_k: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown resampling scheme {self.scheme!r}")
        if not 0 < self.target_minority_share < 1:
            raise ValueError("target minority share must lie in (0, 1)")
        if self.smote_k < 1:
            raise ValueError("smote_k must be at least 1")

    def build(self, random_state=None):
        rs = self.seed if random_state is None else random_state
        if self.scheme == "random_undersample":
            return RandomUnderSampler(self.target_minority_share, rs)
        if self.scheme == "random_oversample":
            return RandomOverSampler(self.target_minority_share, rs)
        return SMOTE(self.target_minority_share, self.smote_k, rs)


def _rng(random_state):
    if isinstance(random_state, np.random.Generator):
        return random_state
    return np.random.default_rng(random_state)


def _class_counts(y):
    y = np.asarray(y)
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary 0/1")
    return int(np.sum(y == 1)), int(np.sum(y == 0))


class _BaseSampler(BaseEstimator):
    def _target_positives(self, n_neg):
        s = self.target_minority_share
        return int(np.floor(n_neg * s / (1.0 - s) + 0.5))

    def fit_resample(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        y = y.astype(np.int64)
        X_res, y_res, synthetic, source = self._resample(X, y, _rng(self.random_state))
        self.synthetic_ = synthetic
        self.sample_indices_ = source
        return X_res, y_res


class RandomUnderSampler(_BaseSampler):
    """Drop majority rows uniformly without replacement until the target share holds."""

    def __init__(self, target_minority_share=0.5, random_state=None):
        self.target_minority_share = target_minority_share
        self.random_state = random_state

    def _resample(self, X, y, rng):
        n_pos, n_neg = _class_counts(y)
        s = self.target_minority_share
        keep_neg = int(np.floor(n_pos * (1.0 - s) / s + 0.5))
        if keep_neg > n_neg or keep_neg < 1:
            raise ValueError(f"minority share {s} unreachable by undersampling "
                             f"({n_pos} positives, {n_neg} negatives)")
        neg_idx = np.flatnonzero(y == 0)
        chosen = rng.choice(neg_idx, size=keep_neg, replace=False)
        keep = np.sort(np.concatenate([np.flatnonzero(y == 1), chosen]))
        return X[keep], y[keep], np.zeros(keep.size, dtype=bool), keep


class RandomOverSampler(_BaseSampler):
    """Duplicate minority rows drawn uniformly with replacement."""

    def __init__(self, target_minority_share=0.5, random_state=None):
        self.target_minority_share = target_minority_share
        self.random_state = random_state

    def _resample(self, X, y, rng):
        n_pos, n_neg = _class_counts(y)
        if n_pos == 0:
            raise ValueError("cannot oversample an empty minority class")
        extra = self._target_positives(n_neg) - n_pos
        if extra < 0:
            raise ValueError(f"minority share {self.target_minority_share} unreachable by oversampling")
        pos_idx = np.flatnonzero(y == 1)
        dup = rng.choice(pos_idx, size=extra, replace=True)
        source = np.concatenate([np.arange(y.size), dup])
        synthetic = np.concatenate([np.zeros(y.size, bool), np.ones(extra, bool)])
        return X[source], y[source], synthetic, source


def nearest_neighbours(X, k: int, chunk: int = 2048) -> np.ndarray:
    """Exact Euclidean k nearest neighbours (self excluded), ties broken by row index."""
    n = X.shape[0]
    if k >= n:
        raise ValueError("need more rows than neighbours")
    sq = np.einsum("ij,ij->i", X, X)
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d2 = sq[start:stop, None] + sq[None, :] - 2.0 * X[start:stop] @ X.T
        np.maximum(d2, 0.0, out=d2)
        d2[np.arange(stop - start), np.arange(start, stop)] = np.inf
        order = np.argsort(d2, axis=1, kind="stable")
        out[start:stop] = order[:, :k]
    return out


class SMOTE(_BaseSampler):
    """Synthetic minority rows ``x + u * (x_nn - x)`` with ``x_nn`` among the k nearest minority rows."""

    def __init__(self, target_minority_share=0.5, k_neighbors=5, random_state=None):
        self.target_minority_share = target_minority_share
        self.k_neighbors = k_neighbors
        self.random_state = random_state

    def _resample(self, X, y, rng):
        n_pos, n_neg = _class_counts(y)
        if n_pos <= self.k_neighbors:
            raise ValueError(f"SMOTE needs more than k={self.k_neighbors} minority rows, got {n_pos}")
        extra = self._target_positives(n_neg) - n_pos
        if extra < 0:
            raise ValueError(f"minority share {self.target_minority_share} unreachable by oversampling")
        pos_idx = np.flatnonzero(y == 1)
        minority = X[pos_idx]
        nn = nearest_neighbours(minority, self.k_neighbors)
        base = rng.integers(0, n_pos, size=extra)
        partner = nn[base, rng.integers(0, self.k_neighbors, size=extra)]
        u = rng.random(extra)
        self.last_base_, self.last_partner_, self.last_u_ = pos_idx[base], pos_idx[partner], u
        synth = interpolate(minority[base], minority[partner], u)
        X_res = np.vstack([X, synth])
        y_res = np.concatenate([y, np.ones(extra, dtype=np.int64)])
        synthetic = np.concatenate([np.zeros(y.size, bool), np.ones(extra, bool)])
        source = np.concatenate([np.arange(y.size), pos_idx[base]])
        return X_res, y_res, synthetic, source


def interpolate(x, x_nn, u):
    """Point(s) on the segment from ``x`` to ``x_nn`` at fraction ``u``."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.ndim == 2 and u.ndim == 1:
        u = u[:, None]
    return x + u * (np.asarray(x_nn, dtype=float) - x)


_NON_FEATURES = ("policy_id", "y", "true_p", "synthetic")


def _resample_data(sampler, data, features=None):
    """Apply ``sampler`` to a Dataset or a frame with a ``y`` column.

    Rows keep every column of their source record; SMOTE rows get
    interpolated ``features`` and an unknown latent ``true_p``.  A
    ``synthetic`` column flags appended rows.
    """
    frame = data.records if isinstance(data, Dataset) else data
    if features is None:
        features = [c for c in frame.columns
                    if c not in _NON_FEATURES and pd.api.types.is_numeric_dtype(frame[c])]
    features = list(features)
    X_res, y_res = sampler.fit_resample(frame[features].to_numpy(dtype=float),
                                        frame["y"].to_numpy())
    out = frame.iloc[sampler.sample_indices_].reset_index(drop=True)
    synthetic = sampler.synthetic_
    if isinstance(sampler, SMOTE):
        out[features] = X_res
        if "true_p" in out:
            out.loc[synthetic, "true_p"] = np.nan
    out["y"] = y_res
    out["synthetic"] = synthetic.astype(np.int64)
    if isinstance(data, Dataset):
        meta = dict(data.meta, resampling=type(sampler).__name__)
        return Dataset(out, data.split_year, meta)
    return out


def undersample(data, plan: ResamplePlan, random_state=None, features=None):
    """Keep every surrender, subsample the rest to ``plan.target_minority_share``."""
    rs = plan.seed if random_state is None else random_state
    return _resample_data(RandomUnderSampler(plan.target_minority_share, rs), data, features)


def oversample(data, plan: ResamplePlan, random_state=None, features=None):
    rs = plan.seed if random_state is None else random_state
    return _resample_data(RandomOverSampler(plan.target_minority_share, rs), data, features)


def smote(data, plan: ResamplePlan, random_state=None, features=None):
    """SMOTE on ``features`` (use preprocessed columns for meaningful distances)."""
    rs = plan.seed if random_state is None else random_state
    return _resample_data(SMOTE(plan.target_minority_share, plan.smote_k, rs), data, features)


def resample(data, plan: ResamplePlan, random_state=None, features=None):
    fn = {"random_undersample": undersample, "random_oversample": oversample,
          "smote": smote}[plan.scheme]
    return fn(data, plan, random_state, features)


# --------------------------------------------------------------------------- theory

def _check_open_unit(**values):
    for name, v in values.items():
        v = np.asarray(v, dtype=float)
        if np.any((v <= 0) | (v >= 1)):
            raise ValueError(f"{name} must lie in the open interval (0, 1)")


def resample_map(p_hat, base_rate, resampled_rate):
    """Confidence prediction after consistent resampling shifts the base rate.

    ``p_hat * s (1 - b) / (b (1 - p_hat) + s (p_hat - b))`` with ``b`` the
    original and ``s`` the resampled base rate.
    """
    _check_open_unit(p_hat=p_hat, base_rate=base_rate, resampled_rate=resampled_rate)
    p = np.asarray(p_hat, dtype=float)
    b, s = float(base_rate), float(resampled_rate)
    denom = b * (1.0 - p) + s * (p - b)
    if np.any(denom <= 0):
        raise ArithmeticError("nonpositive denominator in resampling map")
    out = p * s * (1.0 - b) / denom
    return out[()] if out.ndim == 0 else out


def bias_correct(p_hat_s, base_rate, resampled_rate=0.5):
    """Recover the unbiased prediction from one made on resampled data.

    For perfectly balanced training data (the default) this is
    ``b / (b + (1 - p_s)(1 - b) / p_s)``; other resampled base rates use the
    general inverse of :func:`resample_map`.
    """
    _check_open_unit(p_hat_s=p_hat_s, base_rate=base_rate, resampled_rate=resampled_rate)
    q = np.asarray(p_hat_s, dtype=float)
    b, s = float(base_rate), float(resampled_rate)
    if s == 0.5:
        out = b / (b + (1.0 - q) * (1.0 - b) / q)
    else:
        num = q * b * (1.0 - s)
        out = num / (num + (1.0 - q) * s * (1.0 - b))
    return out[()] if out.ndim == 0 else out


def _bin_counts(x, inner, lo, hi):
    idx = np.searchsorted(inner, x, side="right") + 1
    idx[x < lo] = 0
    idx[x > hi] = inner.size + 2
    return np.bincount(idx, minlength=inner.size + 3)


def consistency_stat(X_original, y_original, X_resampled, y_resampled, class_label=0, bins=10):
    """Largest per-feature total-variation distance between class-conditional histograms.

    Bin edges are the quantiles of the original class-conditional data
    (deciles by default); repeated edges collapse, so indicator columns get
    two bins.  Values outside the original range fall into separate
    underflow and overflow bins, so disjoint supports give distance 1.
    """
    X_original = np.asarray(X_original, dtype=float)
    X_resampled = np.asarray(X_resampled, dtype=float)
    a = X_original[np.asarray(y_original) == class_label]
    b = X_resampled[np.asarray(y_resampled) == class_label]
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError(f"class {class_label} is empty in one of the datasets")
    worst = 0.0
    for j in range(a.shape[1]):
        lo, hi = a[:, j].min(), a[:, j].max()
        inner = np.unique(np.quantile(a[:, j], np.linspace(0, 1, bins + 1)[1:-1]))
        ha = _bin_counts(a[:, j], inner, lo, hi)
        hb = _bin_counts(b[:, j], inner, lo, hi)
        tv = 0.5 * np.abs(ha / ha.sum() - hb / hb.sum()).sum()
        worst = max(worst, float(tv))
    return worst


# --------------------------------------------------------------------------- meta-estimator

class ResampledClassifier(ClassifierMixin, BaseEstimator):
    """Fit ``estimator`` on resampled training data, optionally undoing the bias.

    With ``correct_bias=True`` predictions are mapped back through
    :func:`bias_correct` using the original and resampled base rates.
    """

    def __init__(self, estimator, scheme="random_undersample", target_minority_share=0.5,
                 smote_k=5, correct_bias=False, random_state=None):
        self.estimator = estimator
        self.scheme = scheme
        self.target_minority_share = target_minority_share
        self.smote_k = smote_k
        self.correct_bias = correct_bias
        self.random_state = random_state

    def fit(self, X, y, sample_weight=None):
        X, y = check_X_y(X, y, dtype=np.float64)
        plan = ResamplePlan(self.scheme, self.target_minority_share, self.smote_k)
        sampler = plan.build(self.random_state)
        X_res, y_res = sampler.fit_resample(X, y)
        self.base_rate_ = float(np.mean(y))
        self.resampled_rate_ = float(np.mean(y_res))
        self.n_resampled_ = int(y_res.size)
        self.estimator_ = clone(self.estimator).fit(X_res, y_res)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "estimator_")
        p = self.estimator_.predict_proba(X)[:, 1]
        if self.correct_bias:
            p = bias_correct(np.clip(p, 1e-12, 1 - 1e-12), self.base_rate_, self.resampled_rate_)
        return np.column_stack([1.0 - p, p])

    def predict(self, X, threshold=0.5):
        return (self.predict_proba(X)[:, 1] >= threshold).astype(np.int64)
