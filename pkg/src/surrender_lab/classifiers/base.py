"""Shared plumbing for the probabilistic classifiers."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from ..rng import derive_seed

PROBA_CLAMP = 1e-12


def clamp_proba(p):
    return np.clip(p, PROBA_CLAMP, 1.0 - PROBA_CLAMP)


def member_generator(random_state, *path) -> np.random.Generator:
    """Philox generator for one ensemble member, independent of scheduling."""
    seed = 0 if random_state is None else int(random_state)
    return np.random.Generator(np.random.Philox(key=derive_seed(seed, *path)))


def member_seed(random_state, *path) -> int:
    seed = 0 if random_state is None else int(random_state)
    return derive_seed(seed, *path)


def check_binary(y) -> np.ndarray:
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("training data is empty")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary 0/1")
    return y.astype(np.float64)


def check_weights(sample_weight, n) -> np.ndarray:
    if sample_weight is None:
        return np.ones(n)
    w = np.asarray(sample_weight, dtype=float)
    if w.shape != (n,) or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("sample_weight must be finite, nonnegative and one per row")
    return w


class ProbabilisticClassifier(ClassifierMixin, BaseEstimator):
    """Binary classifier whose primary output is ``P(y = 1 | x)``.

    Subclasses implement ``_fit(X, y, w)`` and ``_proba(X)``.  Inputs are
    validated against the fitted schema (column count, and names when fitted
    on a DataFrame).
    """

    kind = "abstract"
    _min_features = 1

    def fit(self, X, y, sample_weight=None):
        X, y = validate_data(self, X, y, dtype=np.float64, reset=True,
                             ensure_min_features=self._min_features, y_numeric=True)
        y = check_binary(y)
        w = check_weights(sample_weight, y.size)
        if w.sum() <= 0:
            raise ValueError("total sample weight must be positive")
        self.classes_ = np.array([0, 1])
        self.base_rate_ = float(np.dot(w, y) / w.sum())
        self._fit(np.ascontiguousarray(X), y, w)
        return self

    def _validated(self, X) -> np.ndarray:
        check_is_fitted(self, "base_rate_")
        X = validate_data(self, X, dtype=np.float64, reset=False,
                          ensure_min_features=self._min_features)
        return np.ascontiguousarray(X)

    def predict_proba(self, X):
        p = self._proba(self._validated(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X, threshold: float = 0.5):
        return (self.predict_proba(X)[:, 1] >= threshold).astype(np.int64)

    def _export(self) -> dict:
        raise NotImplementedError

    def _import(self, params: dict):
        raise NotImplementedError


class ConstantRateClassifier(ProbabilisticClassifier):
    """Predicts the training surrender rate for every input."""

    kind = "baseline"
    _min_features = 0

    def _fit(self, X, y, w):
        self.rate_ = self.base_rate_

    def _proba(self, X):
        return np.full(X.shape[0], self.rate_)

    def _export(self):
        return {"rate": self.rate_}

    def _import(self, params):
        self.rate_ = float(params["rate"])
