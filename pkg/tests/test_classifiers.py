import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.exceptions import ConvergenceWarning

from surrender_lab.classifiers import (BaggedLogisticClassifier, ConstantRateClassifier,
                                       DecisionTreeClassifier, GradientBoostedTreesClassifier,
                                       LogisticRegressionModel, PolynomialExpansion,
                                       RandomForestClassifier, build_model, engineer_polynomial,
                                       fit_logistic, load_model, model_from_dict, model_to_dict,
                                       preset, save_model)
from surrender_lab.classifiers.logistic import penalized_gradient, penalized_loss
from surrender_lab.classifiers.trees import Tree
from surrender_lab.surrender import ContractScaler, load_profile


# ----------------------------------------------------------------------------- oracles

def xlogx(v):
    return v * np.log(v) if v > 0 else 0.0


def entropy_mass(n, k):
    """n * H(k / n) in nats for k positives out of n."""
    return xlogx(n) - xlogx(k) - xlogx(n - k)


def best_entropy_split(X, y):
    n = y.size
    base = entropy_mass(n, y.sum())
    best = (0.0, None, None)
    candidates = []
    for j in range(X.shape[1]):
        values = np.unique(X[:, j])
        for lo, hi in zip(values[:-1], values[1:]):
            thr = (lo + hi) / 2
            left = X[:, j] <= thr
            gain = base - entropy_mass(left.sum(), y[left].sum()) - entropy_mass((~left).sum(), y[~left].sum())
            candidates.append((gain, j, thr))
    if not candidates:
        return best
    top = max(c[0] for c in candidates)
    if top <= 1e-9:
        return best
    # ties: lowest feature, then lowest threshold
    return min((c for c in candidates if c[0] >= top - 1e-9), key=lambda c: (c[1], c[2]))


def oracle_tree(X, y, depth):
    gain, j, thr = best_entropy_split(X, y) if depth > 0 else (0.0, None, None)
    if j is None:
        return ("leaf", y.mean())
    left = X[:, j] <= thr
    return (j, thr, oracle_tree(X[left], y[left], depth - 1), oracle_tree(X[~left], y[~left], depth - 1))


def nested(tree: Tree, node=0):
    if tree.feature[node] < 0:
        return ("leaf", tree.value[node])
    return (int(tree.feature[node]), float(tree.threshold[node]),
            nested(tree, tree.left[node]), nested(tree, tree.right[node]))


def assert_same_tree(a, b):
    assert a[0] == b[0]
    if a[0] == "leaf":
        assert a[1] == pytest.approx(b[1], abs=1e-12)
    else:
        assert a[1] == pytest.approx(b[1], abs=1e-12)
        assert_same_tree(a[2], b[2])
        assert_same_tree(a[3], b[3])


# ----------------------------------------------------------------------------- baseline

def test_baseline_examples():
    X = np.zeros((4, 2))
    m = ConstantRateClassifier().fit(X, [1, 0, 0, 0])
    np.testing.assert_array_equal(m.predict_proba(np.ones((3, 2)))[:, 1], 0.25)
    assert ConstantRateClassifier().fit(X, [0, 0, 0, 0]).predict_proba(X)[0, 1] == 0.0


def test_training_validation():
    with pytest.raises(ValueError):
        ConstantRateClassifier().fit(np.zeros((3, 1)), [0, 2, 1])
    with pytest.raises(ValueError):
        DecisionTreeClassifier().fit(np.zeros((0, 1)), [])
    m = DecisionTreeClassifier(max_depth=2).fit(np.random.default_rng(0).normal(size=(20, 3)),
                                               [0, 1] * 10)
    with pytest.raises(ValueError):
        m.predict_proba(np.zeros((2, 4)))


# ----------------------------------------------------------------------------- logistic

def test_polynomial_examples():
    np.testing.assert_array_equal(engineer_polynomial([[2.0]]), [[2, 4, 8, 16]])
    np.testing.assert_array_equal(engineer_polynomial([[0.0]]), [[0, 0, 0, 0]])
    X = np.column_stack([np.linspace(-1, 1, 6), np.r_[0, 1, 0, 1, 1, 0], np.arange(6.0)])
    Z = PolynomialExpansion().fit_transform(X)
    assert Z.shape[1] == 2 * 4 + 1
    np.testing.assert_array_equal(Z[:, -1], X[:, 1])


@pytest.mark.parametrize("penalty", ["l2", "l1"])
def test_gradient_matches_finite_differences(penalty):
    rng = np.random.default_rng(4)
    X1 = np.column_stack([np.ones(200), rng.normal(size=(200, 4))])
    y = (rng.random(200) < 0.3).astype(float)
    w = rng.uniform(0.5, 2.0, 200)
    l1, l2 = (0.7, 0.0) if penalty == "l1" else (0.0, 0.7)
    for _ in range(5):
        beta = rng.normal(size=5)
        beta[np.abs(beta) < 0.05] = 0.3  # stay off the L1 kink
        grad = penalized_gradient(beta, X1, y, w, l2)
        grad[1:] += l1 * np.sign(beta[1:])
        h = 1e-6
        fd = np.array([(penalized_loss(beta + h * e, X1, y, w, l1, l2)
                        - penalized_loss(beta - h * e, X1, y, w, l1, l2)) / (2 * h)
                       for e in np.eye(5)])
        np.testing.assert_allclose(grad, fd, rtol=1e-6, atol=1e-6 * np.abs(fd).max())


def test_intercept_only_equals_bernoulli_mle():
    y = np.r_[np.ones(37), np.zeros(463)]
    m = LogisticRegressionModel(C=1.0).fit(np.empty((500, 0)), y)
    assert m.predict_proba(np.empty((3, 0)))[0, 1] == pytest.approx(37 / 500, abs=1e-6)


def test_separable_toy_is_monotone_and_beats_baseline():
    x = np.linspace(-2, 2, 80)[:, None]
    y = (x[:, 0] > 0.1).astype(int)
    m = LogisticRegressionModel(C=100.0).fit(x, y)
    p = m.predict_proba(x)[:, 1]
    assert np.all(np.diff(p) >= 0) and p[0] < 0.01 and p[-1] > 0.99
    ce = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
    assert ce < -np.mean(y * np.log(y.mean()) + (1 - y) * np.log(1 - y.mean()))


def test_l1_sparser_than_l2():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(600, 10))
    y = (rng.random(600) < 1 / (1 + np.exp(-(X[:, 0] - X[:, 1])))).astype(int)
    l1 = LogisticRegressionModel("l1", C=0.05).fit(X, y)
    l2 = LogisticRegressionModel("l2", C=0.05).fit(X, y)
    assert np.sum(np.abs(l1.coef_) < 1e-8) > np.sum(np.abs(l2.coef_) < 1e-8)
    assert l1.converged_ and l2.converged_


def test_l1_solution_satisfies_subgradient_conditions():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(400, 6))
    y = (rng.random(400) < 0.2).astype(float)
    beta, _, norm, ok = fit_logistic(X, y, penalty="l1", C=0.1)
    assert ok and norm <= 1e-8 * 400
    g = penalized_gradient(beta, np.column_stack([np.ones(400), X]), y, np.ones(400), 0.0)
    zero = beta[1:] == 0
    assert np.all(np.abs(g[1:][zero]) <= 10.0 + 1e-6)


def test_non_convergence_is_reported():
    X = np.random.default_rng(1).normal(size=(100, 3))
    y = (X[:, 0] > 0).astype(int)
    with pytest.warns(ConvergenceWarning, match="subgradient"):
        LogisticRegressionModel(C=1e6, max_iter=1).fit(X, y)
    with pytest.raises(ValueError):
        fit_logistic(X, y, penalty="elasticnet")


def test_bag_averages_members(toy_binary):
    X, y = toy_binary
    bag = BaggedLogisticClassifier(C=10.0, n_estimators=4, degree=2, random_state=3).fit(X, y)
    members = bag.member_proba(X)
    assert members.shape == (4, X.shape[0])
    np.testing.assert_allclose(bag.predict_proba(X)[:, 1], members.mean(axis=0), rtol=0, atol=1e-15)
    assert all(bag.converged_)


# ----------------------------------------------------------------------------- CART

@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(5, 200), d=st.integers(1, 4),
       levels=st.integers(2, 12))
def test_cart_matches_exhaustive_oracle(seed, n, d, levels):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, levels, size=(n, d)).astype(float)
    y = (rng.random(n) < 0.3 + 0.4 * (X[:, 0] > levels / 2)).astype(int)
    model = DecisionTreeClassifier(max_depth=3).fit(X, y)
    assert_same_tree(nested(model.tree_), oracle_tree(X, y, 3))


def test_cart_examples():
    X = np.arange(10.0)[:, None]
    pure = DecisionTreeClassifier().fit(X, np.zeros(10, int))
    assert pure.tree_.n_nodes == 1 and pure.predict_proba(X)[0, 1] == 0.0
    y = (X[:, 0] >= 6).astype(int)
    step = DecisionTreeClassifier().fit(X, y)
    assert step.tree_.feature[0] == 0 and step.tree_.threshold[0] == 5.5
    stump = DecisionTreeClassifier(max_depth=0).fit(X, np.r_[np.ones(3), np.zeros(7)].astype(int))
    assert stump.predict_proba(X)[0, 1] == pytest.approx(0.3)


def test_cart_tie_break_prefers_lowest_feature():
    X = np.column_stack([np.arange(8.0), np.arange(8.0)])
    y = (np.arange(8) >= 4).astype(int)
    tree = DecisionTreeClassifier(max_depth=1).fit(X, y).tree_
    assert tree.feature[0] == 0 and tree.threshold[0] == 3.5


def test_min_samples_leaf_respected():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(300, 2))
    y = (rng.random(300) < 0.3).astype(int)
    m = DecisionTreeClassifier(min_samples_leaf=20).fit(X, y)
    leaves = m.tree_.feature < 0
    assert np.all(m.tree_.weight[leaves] >= 20)


# ----------------------------------------------------------------------------- forest

def test_degenerate_forest_equals_cart(toy_binary):
    X, y = toy_binary
    cart = DecisionTreeClassifier(max_depth=5).fit(X, y)
    forest = RandomForestClassifier(1, max_depth=5, max_features=1.0, bootstrap=False,
                                    random_state=1).fit(X, y)
    assert_same_tree(nested(forest.estimators_[0]), nested(cart.tree_))
    np.testing.assert_array_equal(forest.predict_proba(X), cart.predict_proba(X))


def test_forest_averaging_reduces_variance(toy_binary):
    X, y = toy_binary
    forest = RandomForestClassifier(25, max_depth=6, max_features=0.7, random_state=5).fit(X, y)
    grid = np.random.default_rng(6).normal(size=(500, 3))
    members = forest.member_proba(grid)
    p = forest.predict_proba(grid)[:, 1]
    assert np.all((p >= 0) & (p <= 1))
    assert np.var(p) <= np.mean(np.var(members, axis=1))
    same = RandomForestClassifier(5, bootstrap=False, max_features=1.0, random_state=1).fit(X, y)
    np.testing.assert_array_equal(same.member_proba(grid)[0], same.predict_proba(grid)[:, 1])


def test_forest_thread_determinism(toy_binary):
    X, y = toy_binary
    a = RandomForestClassifier(12, max_depth=6, max_features=0.6, random_state=9, n_jobs=1).fit(X, y)
    b = RandomForestClassifier(12, max_depth=6, max_features=0.6, random_state=9, n_jobs=4).fit(X, y)
    c = RandomForestClassifier(12, max_depth=6, max_features=0.6, random_state=10).fit(X, y)
    assert model_to_dict(a)["parameters"] == model_to_dict(b)["parameters"]
    assert model_to_dict(a)["parameters"] != model_to_dict(c)["parameters"]


def test_bag_thread_determinism(toy_binary):
    X, y = toy_binary
    a = BaggedLogisticClassifier(C=5.0, n_estimators=5, degree=2, random_state=2, n_jobs=1).fit(X, y)
    b = BaggedLogisticClassifier(C=5.0, n_estimators=5, degree=2, random_state=2, n_jobs=3).fit(X, y)
    np.testing.assert_array_equal(a.coefs_, b.coefs_)


# ----------------------------------------------------------------------------- boosting

def test_zero_rounds_predict_base_rate(toy_binary):
    X, y = toy_binary
    m = GradientBoostedTreesClassifier(n_estimators=0).fit(X, y)
    np.testing.assert_allclose(m.predict_proba(X)[:, 1], y.mean(), rtol=1e-12)
    half = GradientBoostedTreesClassifier(n_estimators=0).fit(X[:2], [0, 1])
    assert half.decision_function(X[:1])[0] == 0.0
    assert half.predict_proba(X[:1])[0, 1] == 0.5


def test_constant_zero_labels_drive_predictions_down():
    X = np.random.default_rng(0).normal(size=(50, 2))
    y = np.zeros(50, int)
    previous = None
    for rounds in (0, 1, 5, 20):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            p = GradientBoostedTreesClassifier(rounds, learning_rate=0.5).fit(X, y).predict_proba(X)[:, 1]
        assert np.all(p >= 1e-12)
        if previous is not None:
            assert np.all(p <= previous)
        previous = p


def test_stump_matches_second_order_oracle():
    rng = np.random.default_rng(12)
    X = rng.integers(0, 8, size=(150, 3)).astype(float)
    y = (rng.random(150) < 0.2 + 0.5 * (X[:, 1] > 4)).astype(int)
    m = GradientBoostedTreesClassifier(1, max_depth=1, learning_rate=1.0, reg_lambda=0.0,
                                       reg_alpha=0.0, gamma=0.0, min_child_weight=0.0).fit(X, y)
    p0 = y.mean()
    g = np.full(150, p0) - y
    h = np.full(150, p0 * (1 - p0))
    best = None
    for j in range(3):
        values = np.unique(X[:, j])
        for lo, hi in zip(values[:-1], values[1:]):
            thr = (lo + hi) / 2
            L = X[:, j] <= thr
            gain = g[L].sum() ** 2 / h[L].sum() + g[~L].sum() ** 2 / h[~L].sum() - g.sum() ** 2 / h.sum()
            if best is None or gain > best[0] + 1e-12:
                best = (gain, j, thr, -g[L].sum() / h[L].sum(), -g[~L].sum() / h[~L].sum())
    tree = m.estimators_[0]
    assert (tree.feature[0], tree.threshold[0]) == (best[1], best[2])
    assert tree.value[tree.left[0]] == pytest.approx(best[3], rel=1e-10)
    assert tree.value[tree.right[0]] == pytest.approx(best[4], rel=1e-10)


def test_training_loss_non_increasing(toy_binary):
    X, y = toy_binary
    m = GradientBoostedTreesClassifier(60, max_depth=3, learning_rate=0.3, reg_lambda=1.0,
                                       gamma=0.1, min_child_weight=1.0).fit(X, y)
    assert np.all(np.diff(m.train_loss_) <= 1e-12)
    assert m.train_loss_[-1] < m.train_loss_[0]


def test_degenerate_boosting_warns():
    X = np.random.default_rng(0).normal(size=(40, 2))
    y = np.r_[np.ones(4), np.zeros(36)].astype(int)
    with pytest.warns(UserWarning, match="constant-rate"):
        GradientBoostedTreesClassifier(3, gamma=1e6).fit(X, y)


def test_boosting_subsampling_is_deterministic(toy_binary):
    X, y = toy_binary
    kw = dict(n_estimators=30, subsample=0.7, colsample_bylevel=0.6, random_state=4)
    a = GradientBoostedTreesClassifier(**kw).fit(X, y)
    b = GradientBoostedTreesClassifier(**kw).fit(X, y)
    assert model_to_dict(a) == model_to_dict(b)


# ----------------------------------------------------------------------------- calibration & presets

@pytest.fixture(scope="module")
def scaled_train(small_split):
    train, _ = small_split
    prof = load_profile("profile_1")
    sc = ContractScaler(prof.feature_keys).fit(train)
    return sc.transform(train), train.y


@pytest.mark.parametrize("kind,overrides", [
    ("baseline", {}),
    ("cart", {}),
    ("logistic_bag", {"n_estimators": 3}),
    ("random_forest", {"n_estimators": 20}),
    ("gbt", {"n_estimators": 200, "subsample": 1.0, "learning_rate": 0.1}),
])
def test_mean_prediction_matches_training_rate(scaled_train, kind, overrides):
    X, y = scaled_train
    m = build_model(kind, "profile_1", random_state=1, **overrides).fit(X, y)
    assert abs(m.predict_proba(X)[:, 1].mean() - y.mean()) < 0.005


def test_presets_and_factory():
    assert preset("random_forest", "profile_1")["n_estimators"] == 336
    assert preset("gbt", "profile_1")["learning_rate"] == 0.01
    assert preset("gbt", "unknown")["n_estimators"] == 920
    with pytest.raises(ValueError):
        build_model("svm")
    with pytest.raises(ValueError):
        build_model("gbt", "profile_1", depth=3)


# ----------------------------------------------------------------------------- persistence

@pytest.mark.parametrize("kind", ["baseline", "logistic_bag", "cart", "random_forest", "gbt"])
def test_persistence_is_bit_exact(scaled_train, tmp_path, kind):
    X, y = scaled_train
    small = {"logistic_bag": {"n_estimators": 2}, "random_forest": {"n_estimators": 5},
             "gbt": {"n_estimators": 30}}.get(kind, {})
    m = build_model(kind, "profile_1", random_state=3, **small).fit(X, y)
    path = save_model(m, tmp_path / f"{kind}.json", {"seed": 3})
    back = load_model(path)
    np.testing.assert_array_equal(back.predict_proba(X), m.predict_proba(X))
    assert back.training_meta_["seed"] == 3
    assert model_from_dict(model_to_dict(back)).get_params() == m.get_params()
    with pytest.raises(ValueError):
        back.predict_proba(X.iloc[:, :-1])
