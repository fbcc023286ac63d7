"""Numba kernels for exact greedy tree growth and prediction.

A tree is grown on per-sample statistics ``(s1, s2)``:

* entropy criterion: ``s1`` is the sample weight, ``s2`` the weighted label;
  leaves hold the relative frequency ``sum(s2) / sum(s1)``.
* second-order criterion: ``s1`` is the weighted gradient, ``s2`` the
  weighted hessian; leaves hold ``-T_alpha(G) / (H + lambda)``.

``order`` holds, for every feature, the active sample indices sorted by that
feature.  Each node owns the same contiguous segment ``[start, end)`` in every
row; splitting stable-partitions every row, so no re-sorting ever happens.
Candidate thresholds are midpoints between consecutive distinct values and
ties in gain go to the lowest feature index, then the lowest threshold.
"""
import numpy as np
from numba import njit

ENTROPY = 0
SECOND_ORDER = 1

SUBSET_NONE = 0
SUBSET_NODE = 1
SUBSET_LEVEL = 2

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True, nogil=True)
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True)
def _feature_subset(seed, key, n_features, k):
    """The ``k`` features with the smallest hashed keys, in increasing index order."""
    keys = np.empty(n_features, dtype=np.uint64)
    base = _mix(np.uint64(seed) + (np.uint64(key) + np.uint64(1)) * _GOLDEN)
    for f in range(n_features):
        keys[f] = _mix(base ^ ((np.uint64(f) + np.uint64(1)) * _M2))
    chosen = np.sort(np.argsort(keys, kind="mergesort")[:k])
    return chosen


@njit(cache=True, nogil=True)
def _xlogx(x):
    if x <= 0.0:
        return 0.0
    return x * np.log(x)


@njit(cache=True, nogil=True)
def _entropy_mass(w, p):
    """``w`` times the binary entropy of the proportion ``p / w``."""
    q = w - p
    if q < 0.0:
        q = 0.0
    return _xlogx(w) - _xlogx(p) - _xlogx(q)


@njit(cache=True, nogil=True)
def _entropy_mass_table(table, w, p):
    iw = np.int64(w)
    ip = np.int64(p)
    return table[iw] - table[ip] - table[iw - ip]


def xlogx_table(total_weight: float, weights: np.ndarray) -> np.ndarray:
    """Lookup table of ``k log k`` when all weights are integers, else empty."""
    if total_weight > 50_000_000 or not np.all(weights == np.floor(weights)):
        return np.empty(0)
    k = np.arange(int(total_weight) + 1, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(k > 0, k * np.log(k), 0.0)


@njit(cache=True, nogil=True)
def _soft(g, alpha):
    if g > alpha:
        return g - alpha
    if g < -alpha:
        return g + alpha
    return 0.0


@njit(cache=True, nogil=True)
def _score(G, H, lam, alpha):
    t = _soft(G, alpha)
    return t * t / (H + lam)


@njit(cache=True, nogil=True)
def _leaf_value(criterion, S1, S2, lam, alpha):
    if criterion == ENTROPY:
        return S2 / S1 if S1 > 0 else 0.0
    return -_soft(S1, alpha) / (S2 + lam)


@njit(cache=True, nogil=True)
def grow_tree(X, order, s1, s2, criterion, max_depth, min_samples_split, min_samples_leaf,
              min_child_weight, lam, alpha, gamma, subset_mode, n_sub, seed, table):
    """Grow one tree; returns ``(feature, threshold, left, right, value, weight)``.

    ``feature == -1`` marks a leaf.  ``order`` is modified in place.
    ``max_depth < 0`` means unlimited depth.  A nonempty ``table`` (from
    :func:`xlogx_table`) replaces logarithms by lookups for integer weights.
    """
    use_table = table.shape[0] > 0
    n_features = order.shape[0]
    m = order.shape[1]
    if max_depth >= 0 and max_depth < 40:
        cap = min(2 ** (max_depth + 1) - 1, 2 * m + 1)
    else:
        cap = 2 * m + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    weight = np.zeros(cap)

    goes_left = np.zeros(X.shape[0], dtype=np.bool_)
    buf = np.empty(m, dtype=np.int64)
    stack = np.empty((cap, 4), dtype=np.int64)  # node, start, end, depth
    top = 0
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = m
    stack[0, 3] = 0
    top = 1
    n_nodes = 1
    all_features = np.arange(n_features)

    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        depth = stack[top, 3]

        S1 = 0.0
        S2 = 0.0
        for i in range(start, end):
            idx = order[0, i]
            S1 += s1[idx]
            S2 += s2[idx]
        value[node] = _leaf_value(criterion, S1, S2, lam, alpha)
        weight[node] = S1 if criterion == ENTROPY else S2

        if max_depth >= 0 and depth >= max_depth:
            continue
        if end - start < 2:
            continue
        if criterion == ENTROPY:
            if S1 < min_samples_split or S1 < 2.0 * min_samples_leaf:
                continue
            if S2 <= 0.0 or S2 >= S1:
                continue
            parent = _entropy_mass(S1, S2)
            tol = 1e-12 * max(S1, 1.0)
        else:
            parent = _score(S1, S2, lam, alpha)
            tol = 1e-12
        tie = 1e-11 * max(abs(parent), 1.0)

        if subset_mode == SUBSET_NODE:
            candidates = _feature_subset(seed, node, n_features, n_sub)
        elif subset_mode == SUBSET_LEVEL:
            candidates = _feature_subset(seed, depth, n_features, n_sub)
        else:
            candidates = all_features

        best_gain = tol
        best_f = -1
        best_pos = -1
        best_thr = 0.0
        for c in range(candidates.shape[0]):
            f = candidates[c]
            L1 = 0.0
            L2 = 0.0
            for i in range(start, end - 1):
                idx = order[f, i]
                L1 += s1[idx]
                L2 += s2[idx]
                x = X[idx, f]
                xn = X[order[f, i + 1], f]
                if xn <= x:
                    continue
                R1 = S1 - L1
                R2 = S2 - L2
                if criterion == ENTROPY:
                    if L1 < min_samples_leaf or R1 < min_samples_leaf:
                        continue
                    if use_table:
                        gain = (parent - _entropy_mass_table(table, L1, L2)
                                - _entropy_mass_table(table, R1, R2))
                    else:
                        gain = parent - _entropy_mass(L1, L2) - _entropy_mass(R1, R2)
                else:
                    if L2 < min_child_weight or R2 < min_child_weight:
                        continue
                    if L2 + lam <= 0.0 or R2 + lam <= 0.0:
                        continue
                    gain = 0.5 * (_score(L1, L2, lam, alpha) + _score(R1, R2, lam, alpha)
                                  - parent) - gamma
                # candidates arrive in (feature, threshold) order, so a gain that
                # only ties the incumbent up to round-off keeps the earlier split
                if gain > best_gain + (tie if best_f >= 0 else 0.0):
                    best_gain = gain
                    best_f = f
                    best_pos = i + 1
                    mid = 0.5 * (x + xn)
                    best_thr = mid if mid < xn else x

        if best_f < 0:
            continue

        for i in range(start, best_pos):
            goes_left[order[best_f, i]] = True
        for f in range(n_features):
            nl = start
            nr = 0
            for i in range(start, end):
                idx = order[f, i]
                if goes_left[idx]:
                    order[f, nl] = idx
                    nl += 1
                else:
                    buf[nr] = idx
                    nr += 1
            for i in range(nr):
                order[f, nl + i] = buf[i]
        for i in range(start, best_pos):
            goes_left[order[best_f, i]] = False

        lchild = n_nodes
        rchild = n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = lchild
        right[node] = rchild
        # right pushed first so the left subtree is grown first
        stack[top, 0] = rchild
        stack[top, 1] = best_pos
        stack[top, 2] = end
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = lchild
        stack[top, 1] = start
        stack[top, 2] = best_pos
        stack[top, 3] = depth + 1
        top += 1

    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
            value[:n_nodes], weight[:n_nodes])


@njit(cache=True, nogil=True)
def predict_sum(X, feature, threshold, left, right, value, roots):
    """Sum over trees of the leaf value reached by each row (``x <= threshold`` goes left)."""
    n = X.shape[0]
    out = np.zeros(n)
    for t in range(roots.shape[0]):
        root = roots[t]
        for i in range(n):
            node = root
            while feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = root + left[node]
                else:
                    node = root + right[node]
            out[i] += value[node]
    return out


def presort(X: np.ndarray) -> np.ndarray:
    """Per-feature stable argsort, shape ``(n_features, n_samples)``."""
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int64))


def active_order(full_order: np.ndarray, active: np.ndarray | None) -> np.ndarray:
    """Restrict a presorted order to active samples, keeping each row sorted."""
    if active is None:
        return full_order.copy()
    mask = active[full_order]
    m = int(active.sum())
    return np.ascontiguousarray(full_order[mask].reshape(full_order.shape[0], m))
