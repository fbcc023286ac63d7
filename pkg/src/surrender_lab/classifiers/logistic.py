"""Regularised logistic regression on polynomial features, and its bagged ensemble."""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_is_fitted, validate_data

from ..surrender import sigmoid
from .base import ProbabilisticClassifier, clamp_proba, member_generator


def engineer_polynomial(features, max_degree: int = 4, indicators=()) -> np.ndarray:
    """Expand every numeric column ``x`` into ``x, x**2, ..., x**max_degree``.

    Columns listed in ``indicators`` (by position) are appended unchanged
    after the expanded numeric block.  No cross terms are formed.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if max_degree < 1:
        raise ValueError("max_degree must be at least 1")
    indicators = sorted(set(int(i) for i in indicators))
    numeric = [j for j in range(X.shape[1]) if j not in indicators]
    blocks = [X[:, [j]] ** np.arange(1, max_degree + 1) for j in numeric]
    blocks.append(X[:, indicators])
    return np.hstack(blocks) if blocks else np.empty((X.shape[0], 0))


class PolynomialExpansion(TransformerMixin, BaseEstimator):
    """Per-column powers up to ``max_degree``; 0/1 indicator columns pass through.

    With ``indicators="auto"`` a column is treated as an indicator when all its
    fitted values are 0 or 1.
    """

    def __init__(self, max_degree=4, indicators="auto"):
        self.max_degree = max_degree
        self.indicators = indicators

    def fit(self, X, y=None):
        X = validate_data(self, X, dtype=np.float64, ensure_min_features=0)
        if isinstance(self.indicators, str):
            if self.indicators != "auto":
                raise ValueError("indicators must be 'auto' or a list of column positions")
            self.indicator_idx_ = [j for j in range(X.shape[1]) if np.isin(X[:, j], (0.0, 1.0)).all()]
        else:
            self.indicator_idx_ = sorted(int(j) for j in self.indicators)
        return self

    def transform(self, X):
        check_is_fitted(self, "indicator_idx_")
        X = validate_data(self, X, dtype=np.float64, reset=False, ensure_min_features=0)
        return engineer_polynomial(X, self.max_degree, self.indicator_idx_)


def penalized_loss(beta, X1, y, w, l1: float, l2: float) -> float:
    """Summed weighted cross-entropy plus ``l1 * |b|_1 + l2/2 * |b|^2`` (intercept ``beta[0]`` free)."""
    z = X1 @ beta
    data = np.dot(w, np.logaddexp(0.0, np.where(y > 0, -z, z)))
    b = beta[1:]
    return float(data + l1 * np.abs(b).sum() + 0.5 * l2 * np.dot(b, b))


def penalized_gradient(beta, X1, y, w, l2: float) -> np.ndarray:
    """Gradient of the smooth part (data term plus L2)."""
    g = X1.T @ (w * (sigmoid(X1 @ beta) - y))
    g[1:] += l2 * beta[1:]
    return g


def _optimality(beta, g, l1):
    """Infinity norm of the minimum-norm subgradient."""
    if l1 == 0:
        return float(np.max(np.abs(g)))
    r = np.empty_like(g)
    r[0] = g[0]
    b, gb = beta[1:], g[1:]
    r[1:] = np.where(b != 0, gb + l1 * np.sign(b), np.maximum(np.abs(gb) - l1, 0.0))
    return float(np.max(np.abs(r)))


def _cd_direction(beta, g, H, l1, sweeps=200, tol=1e-13):
    """Coordinate descent on the L1-penalised quadratic model around ``beta``."""
    p = beta.size
    d = np.zeros(p)
    Hd = np.zeros(p)
    for _ in range(sweeps):
        biggest = 0.0
        for j in range(p):
            a = H[j, j]
            if a <= 0:
                continue
            b = g[j] + Hd[j] - a * d[j]
            if j == 0:
                u = beta[j] - b / a
            else:
                v = beta[j] - b / a
                u = np.sign(v) * max(abs(v) - l1 / a, 0.0)
            step = (u - beta[j]) - d[j]
            if step != 0.0:
                d[j] += step
                Hd += H[:, j] * step
                biggest = max(biggest, abs(step))
        if biggest <= tol * (1.0 + np.max(np.abs(beta))):
            break
    return d


def fit_logistic(X, y, w=None, penalty="l2", C=1.0, tol=1e-8, max_iter=10_000):
    """Minimise the penalised logistic loss; returns ``(beta, n_iter, grad_norm, converged)``.

    Damped Newton for ``l2``; proximal Newton (coordinate descent on the
    local quadratic model plus a backtracking line search) for ``l1``.  The
    loss is summed over rows and the penalty carries weight ``1/C``, as in
    scikit-learn.  Convergence: minimum-norm subgradient below ``tol`` times
    the total weight.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.size
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    if penalty not in ("l1", "l2"):
        raise ValueError("penalty must be 'l1' or 'l2'")
    if not C > 0:
        raise ValueError("C must be positive")
    l1 = 1.0 / C if penalty == "l1" else 0.0
    l2 = 1.0 / C if penalty == "l2" else 0.0
    X1 = np.hstack([np.ones((n, 1)), X])
    p = X1.shape[1]
    ridge = np.full(p, l2)
    ridge[0] = 0.0

    rate = np.clip(np.dot(w, y) / w.sum(), 1e-12, 1 - 1e-12)
    beta = np.zeros(p)
    beta[0] = np.log(rate / (1 - rate))
    threshold = tol * max(w.sum(), 1.0)
    obj = penalized_loss(beta, X1, y, w, l1, l2)
    g = penalized_gradient(beta, X1, y, w, l2)
    norm = _optimality(beta, g, l1)
    it = 0
    while norm > threshold and it < max_iter:
        it += 1
        mu = sigmoid(X1 @ beta)
        H = (X1 * (w * mu * (1 - mu))[:, None]).T @ X1 + np.diag(ridge)
        H[np.diag_indices(p)] += 1e-12 * (1.0 + np.trace(H) / p)
        if l1 == 0:
            try:
                d = np.linalg.solve(H, -g)
            except np.linalg.LinAlgError:
                d = np.linalg.lstsq(H, -g, rcond=None)[0]
            decrease = float(g @ d)
        else:
            d = _cd_direction(beta, g, H, l1)
            b = beta[1:]
            decrease = float(g @ d + l1 * (np.abs(b + d[1:]).sum() - np.abs(b).sum()))
        if decrease >= 0:
            break  # no descent direction left at machine precision
        t = 1.0
        while True:
            cand = beta + t * d
            new_obj = penalized_loss(cand, X1, y, w, l1, l2)
            if new_obj <= obj + 1e-4 * t * decrease or t < 1e-12:
                break
            t *= 0.5
        if new_obj > obj:
            break
        beta, obj = cand, new_obj
        g = penalized_gradient(beta, X1, y, w, l2)
        norm = _optimality(beta, g, l1)
    converged = norm <= threshold
    return beta, it, norm, converged


class LogisticRegressionModel(ProbabilisticClassifier):
    """Single penalised logistic regression (no feature expansion)."""

    kind = "logistic"
    _min_features = 0

    def __init__(self, penalty="l2", C=1.0, tol=1e-8, max_iter=10_000):
        self.penalty = penalty
        self.C = C
        self.tol = tol
        self.max_iter = max_iter

    def _fit(self, X, y, w):
        beta, it, norm, ok = fit_logistic(X, y, w, self.penalty, self.C, self.tol, self.max_iter)
        if not ok:
            warnings.warn(f"logistic fit stopped after {it} iterations with subgradient "
                          f"norm {norm:.3e}", ConvergenceWarning, stacklevel=3)
        self.intercept_ = float(beta[0])
        self.coef_ = beta[1:].copy()
        self.n_iter_ = it
        self.grad_norm_ = norm
        self.converged_ = ok

    def _proba(self, X):
        return clamp_proba(sigmoid(self.intercept_ + X @ self.coef_))

    def _export(self):
        return {"intercept": self.intercept_, "coef": self.coef_.tolist()}

    def _import(self, params):
        self.intercept_ = float(params["intercept"])
        self.coef_ = np.asarray(params["coef"], dtype=float)


class BaggedLogisticClassifier(ProbabilisticClassifier):
    """Mean of ``n_estimators`` logistic regressions fitted on bootstrap resamples.

    Inputs are expanded with :class:`PolynomialExpansion` up to ``degree``
    before fitting.  Member ``k`` draws its bootstrap from a stream keyed by
    ``(random_state, k)``.
    """

    kind = "logistic_bag"
    _min_features = 0

    def __init__(self, penalty="l2", C=1.0, n_estimators=10, degree=4, bootstrap=True,
                 tol=1e-8, max_iter=10_000, random_state=None, n_jobs=1):
        self.penalty = penalty
        self.C = C
        self.n_estimators = n_estimators
        self.degree = degree
        self.bootstrap = bootstrap
        self.tol = tol
        self.max_iter = max_iter
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _fit(self, X, y, w):
        self.expansion_ = PolynomialExpansion(self.degree).fit(X)
        Z = self.expansion_.transform(X)
        n = y.size

        def member(k):
            weights = w
            if self.bootstrap:
                draws = member_generator(self.random_state, "logistic", "bootstrap", k).integers(0, n, n)
                weights = w * np.bincount(draws, minlength=n)
            return fit_logistic(Z, y, weights, self.penalty, self.C, self.tol, self.max_iter)

        jobs = max(1, int(self.n_jobs or 1))
        if jobs == 1:
            fits = [member(k) for k in range(self.n_estimators)]
        else:
            with ThreadPoolExecutor(jobs) as pool:
                fits = list(pool.map(member, range(self.n_estimators)))
        failed = [k for k, f in enumerate(fits) if not f[3]]
        if failed:
            worst = max(fits[k][2] for k in failed)
            warnings.warn(f"{len(failed)} of {len(fits)} bag members did not converge "
                          f"(largest subgradient norm {worst:.3e})", ConvergenceWarning, stacklevel=3)
        self.coefs_ = np.stack([f[0] for f in fits])
        self.n_iter_ = [f[1] for f in fits]
        self.converged_ = [bool(f[3]) for f in fits]

    def member_proba(self, X) -> np.ndarray:
        Z = self.expansion_.transform(self._validated(X))
        return clamp_proba(sigmoid(self.coefs_[:, :1] + self.coefs_[:, 1:] @ Z.T))

    def _proba(self, X):
        Z = self.expansion_.transform(X)
        members = clamp_proba(sigmoid(self.coefs_[:, :1] + self.coefs_[:, 1:] @ Z.T))
        return members.mean(axis=0)

    def _export(self):
        return {"indicator_columns": list(self.expansion_.indicator_idx_),
                "coefficients": self.coefs_.tolist()}

    def _import(self, params):
        self.expansion_ = PolynomialExpansion(self.degree, params["indicator_columns"])
        self.expansion_.indicator_idx_ = list(params["indicator_columns"])
        self.expansion_.n_features_in_ = self.n_features_in_
        self.coefs_ = np.asarray(params["coefficients"], dtype=float).reshape(self.n_estimators, -1)
