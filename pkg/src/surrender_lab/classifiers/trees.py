"""CART, random forest and second-order gradient-boosted trees."""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..surrender import logit, sigmoid
from . import _tree
from .base import ProbabilisticClassifier, clamp_proba, member_generator, member_seed


class Tree:
    """Flat array form of one fitted binary tree (node 0 is the root)."""

    __slots__ = ("feature", "threshold", "left", "right", "value", "weight")

    def __init__(self, feature, threshold, left, right, value, weight=None):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=np.float64)
        self.weight = (np.zeros(self.feature.size) if weight is None
                       else np.asarray(weight, dtype=np.float64))

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for node in range(self.n_nodes):
            if self.feature[node] >= 0:
                depth[self.left[node]] = depth[self.right[node]] = depth[node] + 1
        return int(depth.max())

    def to_nodes(self) -> list:
        """Node list: ``[feature, threshold, left, right]`` for splits, ``[value]`` for leaves."""
        nodes = []
        for i in range(self.n_nodes):
            if self.feature[i] < 0:
                nodes.append([float(self.value[i])])
            else:
                nodes.append([int(self.feature[i]), float(self.threshold[i]),
                              int(self.left[i]), int(self.right[i]), float(self.value[i])])
        return nodes

    @classmethod
    def from_nodes(cls, nodes) -> "Tree":
        n = len(nodes)
        feature = np.full(n, -1, dtype=np.int64)
        threshold = np.zeros(n)
        left = np.full(n, -1, dtype=np.int64)
        right = np.full(n, -1, dtype=np.int64)
        value = np.zeros(n)
        for i, node in enumerate(nodes):
            if len(node) == 1:
                value[i] = node[0]
            else:
                feature[i], threshold[i], left[i], right[i], value[i] = node
        return cls(feature, threshold, left, right, value)


class _Forest:
    """Trees concatenated into one set of arrays for fast summed prediction."""

    def __init__(self, trees):
        sizes = [t.n_nodes for t in trees]
        self.roots = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        cat = lambda name: np.concatenate([getattr(t, name) for t in trees])
        self.feature = cat("feature")
        self.threshold = cat("threshold")
        self.left = cat("left")
        self.right = cat("right")
        self.value = cat("value")

    def sum(self, X):
        return _tree.predict_sum(X, self.feature, self.threshold, self.left, self.right,
                                 self.value, self.roots)


_NO_TABLE = np.empty(0)


def _max_depth(value) -> int:
    return -1 if value is None else int(value)


def _grow_entropy_tree(X, order, y, w, max_depth, min_samples_split, min_samples_leaf,
                       subset_mode=_tree.SUBSET_NONE, n_sub=0, seed=0) -> Tree:
    out = _tree.grow_tree(X, order, w, w * y, _tree.ENTROPY, _max_depth(max_depth),
                          float(min_samples_split), float(min_samples_leaf), 0.0, 0.0, 0.0, 0.0,
                          subset_mode, n_sub, np.uint64(seed), _tree.xlogx_table(w.sum(), w))
    return Tree(*out)


class DecisionTreeClassifier(ProbabilisticClassifier):
    """CART with cross-entropy impurity; leaves predict the relative surrender frequency.

    Parameters
    ----------
    max_depth : int or None
    min_samples_split, min_samples_leaf : int
        Counted in (weighted) samples.
    """

    kind = "cart"

    def __init__(self, max_depth=None, min_samples_split=2, min_samples_leaf=1):
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.min_samples_leaf = min_samples_leaf

    def _fit(self, X, y, w):
        active = w > 0
        order = _tree.active_order(_tree.presort(X), None if active.all() else active)
        self.tree_ = _grow_entropy_tree(X, order, y, w, self.max_depth,
                                        self.min_samples_split, self.min_samples_leaf)
        self._forest = _Forest([self.tree_])

    def _proba(self, X):
        return self._forest.sum(X)

    def _export(self):
        return {"tree": self.tree_.to_nodes()}

    def _import(self, params):
        self.tree_ = Tree.from_nodes(params["tree"])
        self._forest = _Forest([self.tree_])


def _n_sub_features(fraction, n_features, rounding) -> int:
    if fraction is None:
        return n_features
    if isinstance(fraction, (int, np.integer)) and not isinstance(fraction, bool) and fraction > 1:
        return min(int(fraction), n_features)
    if not 0 < fraction <= 1:
        raise ValueError("feature fraction must lie in (0, 1]")
    k = int(np.floor(fraction * n_features)) if rounding == "floor" else int(round(fraction * n_features))
    return max(1, min(k, n_features))


class RandomForestClassifier(ProbabilisticClassifier):
    """Average of CARTs with per-split feature subsampling and optional bootstrap.

    Every tree draws its bootstrap sample and feature subsets from a stream
    keyed by ``(random_state, tree index)``, so fits are identical for any
    ``n_jobs``.  ``max_features`` is a fraction of the columns (at least one
    feature per split).
    """

    kind = "random_forest"

    def __init__(self, n_estimators=100, max_depth=None, max_features=1.0, bootstrap=True,
                 min_samples_split=2, min_samples_leaf=1, random_state=None, n_jobs=1):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.min_samples_split = min_samples_split
        self.min_samples_leaf = min_samples_leaf
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _fit(self, X, y, w):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be at least 1")
        n, n_features = X.shape
        k = _n_sub_features(self.max_features, n_features, "floor")
        mode = _tree.SUBSET_NODE if k < n_features else _tree.SUBSET_NONE
        full_order = _tree.presort(X)

        def grow(i):
            weights = w
            if self.bootstrap:
                draws = member_generator(self.random_state, "forest", "bootstrap", i).integers(0, n, n)
                weights = w * np.bincount(draws, minlength=n)
            active = weights > 0
            order = _tree.active_order(full_order, None if active.all() else active)
            seed = member_seed(self.random_state, "forest", "features", i)
            return _grow_entropy_tree(X, order, y, weights, self.max_depth, self.min_samples_split,
                                      self.min_samples_leaf, mode, k, seed)

        jobs = max(1, int(self.n_jobs or 1))
        if jobs == 1:
            self.estimators_ = [grow(i) for i in range(self.n_estimators)]
        else:
            with ThreadPoolExecutor(jobs) as pool:
                self.estimators_ = list(pool.map(grow, range(self.n_estimators)))
        self._forest = _Forest(self.estimators_)

    def _proba(self, X):
        return self._forest.sum(X) / len(self.estimators_)

    def member_proba(self, X) -> np.ndarray:
        """Per-tree predictions, shape ``(n_estimators, n_rows)``."""
        X = self._validated(X)
        return np.stack([_Forest([t]).sum(X) for t in self.estimators_])

    def _export(self):
        return {"trees": [t.to_nodes() for t in self.estimators_]}

    def _import(self, params):
        self.estimators_ = [Tree.from_nodes(t) for t in params["trees"]]
        self._forest = _Forest(self.estimators_)


class GradientBoostedTreesClassifier(ProbabilisticClassifier):
    """Second-order gradient boosting on the cross-entropy, in the style of XGBoost.

    Starts from ``logit(base rate)``.  Each round grows a depth-limited tree on
    gradients ``p - y`` and hessians ``p (1 - p)``.  A split must have
    ``0.5 * [T(G_L)^2/(H_L+lam) + T(G_R)^2/(H_R+lam) - T(G)^2/(H+lam)] - gamma > 0``
    where ``T`` is soft-thresholding by ``reg_alpha``.  Both children need
    hessian mass at least ``min_child_weight``.  Leaves hold
    ``-T(G)/(H+lam)`` and contributions are shrunk by ``learning_rate``.  Rows
    are subsampled per round, features per tree level.
    """

    kind = "gbt"

    def __init__(self, n_estimators=100, max_depth=3, learning_rate=0.3, reg_lambda=1.0,
                 reg_alpha=0.0, gamma=0.0, min_child_weight=1.0, subsample=1.0,
                 colsample_bylevel=1.0, random_state=None):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.reg_lambda = reg_lambda
        self.reg_alpha = reg_alpha
        self.gamma = gamma
        self.min_child_weight = min_child_weight
        self.subsample = subsample
        self.colsample_bylevel = colsample_bylevel
        self.random_state = random_state

    def _fit(self, X, y, w):
        if self.n_estimators < 0:
            raise ValueError("n_estimators must be nonnegative")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must lie in (0, 1]")
        if self.reg_lambda < 0 or self.reg_alpha < 0 or self.gamma < 0:
            raise ValueError("regularisation parameters must be nonnegative")
        n, n_features = X.shape
        k = _n_sub_features(self.colsample_bylevel, n_features, "round")
        mode = _tree.SUBSET_LEVEL if k < n_features else _tree.SUBSET_NONE
        self.base_score_ = float(logit(clamp_proba(self.base_rate_)))
        full_order = _tree.presort(X)
        F = np.full(n, self.base_score_)
        trees, losses = [], [_weighted_log_loss(y, F, w)]
        split_rounds = 0
        for r in range(self.n_estimators):
            p = sigmoid(F)
            weights = w
            if self.subsample < 1:
                keep = member_generator(self.random_state, "gbt", "rows", r).random(n) < self.subsample
                weights = w * keep
            active = weights > 0
            if not active.any():
                continue
            order = _tree.active_order(full_order, None if active.all() else active)
            seed = member_seed(self.random_state, "gbt", "columns", r)
            tree = Tree(*_tree.grow_tree(
                X, order, weights * (p - y), weights * p * (1.0 - p), _tree.SECOND_ORDER,
                int(self.max_depth), 0.0, 0.0, float(self.min_child_weight),
                float(self.reg_lambda), float(self.reg_alpha), float(self.gamma),
                mode, k, np.uint64(seed), _NO_TABLE))
            split_rounds += tree.n_nodes > 1
            trees.append(tree)
            F = F + self.learning_rate * _Forest([tree]).sum(X)
            losses.append(_weighted_log_loss(y, F, w))
        if self.n_estimators and split_rounds == 0:
            warnings.warn("no boosting round found a split with positive gain; "
                          "the model is a constant-rate classifier", stacklevel=3)
        self.estimators_ = trees
        self.train_loss_ = np.asarray(losses)
        self.n_split_rounds_ = split_rounds
        self._forest = _Forest(trees) if trees else None

    def decision_function(self, X):
        return self._raw(self._validated(X))

    def _raw(self, X):
        if self._forest is None:
            return np.full(X.shape[0], self.base_score_)
        return self.base_score_ + self.learning_rate * self._forest.sum(X)

    def _proba(self, X):
        return clamp_proba(sigmoid(self._raw(X)))

    def _export(self):
        return {"base_score": self.base_score_, "trees": [t.to_nodes() for t in self.estimators_]}

    def _import(self, params):
        self.base_score_ = float(params["base_score"])
        self.estimators_ = [Tree.from_nodes(t) for t in params["trees"]]
        self._forest = _Forest(self.estimators_) if self.estimators_ else None


def _weighted_log_loss(y, F, w) -> float:
    # log(1 + exp(-F)) for y = 1, log(1 + exp(F)) for y = 0
    return float(np.dot(w, np.logaddexp(0.0, np.where(y > 0, -F, F))) / w.sum())
