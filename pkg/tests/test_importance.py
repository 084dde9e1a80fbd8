import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from alpe_lob.importance import (DELTA, GDImportance, ImportanceVector, MDIImportance,
                                 RegressionForest, apply_importance, compute_importance, gd_gradient,
                                 gd_importance, grow_tree, impurity_reduction, mdi_importance,
                                 variance_impurity)


def test_variance_impurity_examples():
    assert variance_impurity([1, 1, 1]) == 0
    assert variance_impurity([0, 2]) == 1
    assert variance_impurity([5]) == 0
    with pytest.raises(ValueError):
        variance_impurity([])


@given(arrays(float, st.integers(1, 30), elements=st.floats(-1e3, 1e3)), st.floats(-1e3, 1e3))
def test_variance_translation_invariant(v, c):
    base = variance_impurity(v)
    assert variance_impurity(v + c) == pytest.approx(base, rel=1e-9, abs=1e-9)


def test_impurity_reduction_examples():
    assert impurity_reduction([0, 0, 2, 2], [0, 0], [2, 2]) == 1
    assert impurity_reduction([0, 2, 0, 2], [0, 2], [0, 2]) == 0
    assert impurity_reduction([3, 3, 3], [3], [3, 3]) == 0
    with pytest.raises(ValueError, match="partition"):
        impurity_reduction([0, 1], [0], [2])


def _brute_best_gain(x, y):
    best = 0.0
    for t in np.unique(x)[:-1]:
        m = x <= t
        best = max(best, impurity_reduction(y, y[m], y[~m]))
    return best


@given(arrays(float, st.integers(2, 25), elements=st.floats(-10, 10)), st.integers(0, 2**31))
def test_greedy_split_gain_matches_brute_force(y, seed):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 5, size=y.size).astype(float)
    tree = grow_tree(x[:, None], y, np.random.default_rng(0), max_features=1, max_depth=1)
    gains = [g for _, g in tree.splits()]
    assert all(g >= 0 for g in gains)
    if gains:
        assert gains[0] == pytest.approx(_brute_best_gain(x, y), rel=1e-9, abs=1e-12)


def test_tree_node_counts_partition():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(60, 3))
    y = X[:, 0] * 2 + rng.normal(scale=0.1, size=60)
    t = grow_tree(X, y, rng, max_features=3)
    for j in range(t.node_count):
        if t.feature[j] >= 0:
            assert t.n_samples[t.left[j]] + t.n_samples[t.right[j]] == t.n_samples[j]
        assert t.impurity[j] >= 0


def test_constant_target_gives_single_leaves():
    X = np.random.default_rng(0).normal(size=(40, 3))
    forest = RegressionForest(n_estimators=10).fit(X, np.full(40, 2.5))
    assert all(t.node_count == 1 for t in forest.trees_)
    np.testing.assert_array_equal(mdi_importance(forest).scores, np.full(3, DELTA))


def test_perfect_binary_separation_only_feature_zero():
    X = np.array([[0.0, 5.0], [0.0, 1.0], [1.0, 3.0], [1.0, 2.0]])
    y = np.array([0.0, 0.0, 2.0, 2.0])
    forest = RegressionForest(n_estimators=30, max_features=None, random_state=4).fit(X, y)
    for t in forest.trees_:
        recorded = list(t.splits())
        assert all(f == 0 for f, _ in recorded)
    assert forest.impurity_reductions()[:, 1].sum() == 0
    assert forest.impurity_reductions()[:, 0].sum() > 0


def test_single_split_hand_value():
    X = np.array([[0.0], [0.0], [1.0], [1.0]])
    y = np.array([0.0, 0.0, 2.0, 2.0])
    forest = RegressionForest(n_estimators=1, bootstrap=False).fit(X, y)
    assert mdi_importance(forest).scores[0] == pytest.approx(1.001, abs=1e-15)


def test_forest_is_deterministic_and_predicts():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(80, 4))
    y = 3 * X[:, 1] + rng.normal(scale=0.05, size=80)
    a = RegressionForest(n_estimators=8, random_state=5).fit(X, y)
    b = RegressionForest(n_estimators=8, random_state=5).fit(X, y)
    np.testing.assert_array_equal(a.impurity_reductions(), b.impurity_reductions())
    assert np.corrcoef(a.predict(X), y)[0, 1] > 0.95
    with pytest.raises(ValueError):
        RegressionForest().fit(X[:1], y[:1])


def test_mdi_floor_and_ranking():
    hits = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal(size=(200, 2))
        y = 5 * X[:, 0] + rng.normal(scale=0.01, size=200)
        scores = compute_importance("mdi", X, y, seed).scores
        assert np.all(scores >= DELTA)
        hits += scores[0] > scores[1]
    assert hits >= 19


# -- GD ----------------------------------------------------------------------------------

def _scripted_gd(X, y, eta, T):
    theta = [1.0] * len(X[0])
    n = len(X)
    for _ in range(T):
        err = [sum(xi * ti for xi, ti in zip(row, theta)) - yi for row, yi in zip(X, y)]
        grad = [2.0 / n * sum(X[i][j] * err[i] for i in range(n)) for j in range(len(theta))]
        grad = [min(1.0, max(-1.0, g)) for g in grad]
        theta = [t - eta * g for t, g in zip(theta, grad)]
    return theta


def test_gd_matches_scripted_recurrence():
    fi, state = gd_importance([[1.0], [2.0]], [2.0, 4.0], 0.001, 10, return_state=True)
    ref = _scripted_gd([[1.0], [2.0]], [2.0, 4.0], 0.001, 10)
    assert abs(state.theta[0] - ref[0]) < 1e-12
    assert fi.scores[0] == pytest.approx(abs(ref[0]) + DELTA, abs=1e-12)


def test_gd_zero_error_fixed_point():
    X = np.array([[1.0, 2.0], [3.0, -1.0]])
    fi = gd_importance(X, X @ np.ones(2))
    np.testing.assert_array_equal(fi.scores, [1.001, 1.001])


def test_gd_clips_large_gradient():
    # raw gradient (2/1)*1*(1-(-0.85)) = 3.7
    grad, _ = gd_gradient(np.array([[1.0]]), np.array([-0.85]), np.ones(1))
    assert grad[0] == 1.0
    fi = gd_importance([[1.0]], [-0.85], eta=0.001, n_iter=1)
    assert fi.scores[0] == pytest.approx(1.0 - 0.001 + DELTA, abs=1e-15)


def test_gd_handles_extreme_magnitudes():
    X = np.array([[1e308, 1.0], [-1e308, 2.0]])
    fi = gd_importance(X, [1.0, 2.0])
    assert np.all(np.isfinite(fi.scores))


@given(arrays(float, (5, 3), elements=st.floats(-1e300, 1e300)),
       arrays(float, 5, elements=st.floats(-1e300, 1e300)))
def test_gd_never_nan(X, y):
    fi, state = gd_importance(X, y, return_state=True)
    assert np.all(np.isfinite(fi.scores)) and np.all(fi.scores >= DELTA)
    assert np.all(np.abs(state.gradient) <= 1.0)


def test_gd_one_informative_feature():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal(size=(200, 2))
        y = 5 * X[:, 0] + rng.normal(scale=0.01, size=200)
        s = gd_importance(X, y).scores
        assert s[0] > s[1]


def test_gd_dimension_mismatch():
    with pytest.raises(ValueError):
        gd_importance(np.ones((3, 2)), np.ones(2))


# -- weighting ----------------------------------------------------------------------------

def test_apply_importance_examples():
    X = np.array([[0.3, 7.0]])
    np.testing.assert_array_equal(apply_importance(X, np.ones(2)), X)
    np.testing.assert_array_equal(apply_importance([[1.0, 1.0]], [2.0, 1.0]), [[2.0, 1.0]])
    np.testing.assert_array_equal(apply_importance(np.zeros((2, 2)), [5.0, 3.0]), np.zeros((2, 2)))
    np.testing.assert_array_equal(apply_importance(X, np.full(2, DELTA)), X * 0.001)
    with pytest.raises(ValueError):
        apply_importance(X, np.ones(3))


def test_importance_csv_round_trip():
    fi = ImportanceVector("gd", np.array([1.25, 0.001]))
    names, back = ImportanceVector.from_csv(fi.to_csv(["a", "b"]), "gd")
    assert names == ["a", "b"]
    np.testing.assert_array_equal(back.scores, fi.scores)


def test_estimator_wrappers():
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(50, 3))
    y = X[:, 2]
    mdi = MDIImportance(n_estimators=5).fit(X, y)
    assert mdi.get_params()["n_estimators"] == 5
    np.testing.assert_array_equal(mdi.transform(X), X * mdi.scores_)
    gd = GDImportance().fit(X, y)
    np.testing.assert_array_equal(gd.transform(X), X * gd.scores_)
    with pytest.raises(ValueError):
        compute_importance("perm", X, y)


def _reference_tree(X, y, max_depth):
    """Depth-first grower evaluating every cut by direct impurity arithmetic."""
    splits, leaves = [], []

    def build(idx, depth):
        ys = y[idx]
        if ys.max() == ys.min() or depth >= max_depth or idx.size < 2:
            leaves.append((idx.size, ys.mean()))
            return
        best = None
        for f in range(X.shape[1]):
            for t in np.unique(X[idx, f])[:-1]:
                m = X[idx, f] <= t
                g = impurity_reduction(ys, ys[m], ys[~m])
                if g > 0 and (best is None or g > best[0] + 1e-12):
                    best = (g, f, m)
        if best is None:
            leaves.append((idx.size, ys.mean()))
            return
        splits.append((best[1], best[0]))
        build(idx[best[2]], depth + 1)
        build(idx[~best[2]], depth + 1)

    build(np.arange(len(y)), 0)
    return splits, leaves


@pytest.mark.parametrize("seed", range(5))
def test_level_wise_tree_matches_reference(seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 6, size=(40, 3)).astype(float)
    y = X[:, 0] * 1.7 - X[:, 2] + rng.normal(scale=0.3, size=40)
    tree = grow_tree(X, y, rng, max_features=3, max_depth=4)
    ref_splits, ref_leaves = _reference_tree(X, y, 4)
    got = sorted(tree.splits())
    assert [f for f, _ in got] == [f for f, _ in sorted(ref_splits)]
    np.testing.assert_allclose([g for _, g in got], [g for _, g in sorted(ref_splits)], rtol=1e-9, atol=1e-12)
    leaves = sorted((n, v) for f, n, v in zip(tree.feature, tree.n_samples, tree.value) if f < 0)
    np.testing.assert_allclose(np.array(leaves), np.array(sorted(ref_leaves)), rtol=1e-12)


def test_tree_b_independent_of_forest_size():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(70, 5))
    y = X[:, 3] - X[:, 0] + rng.normal(scale=0.1, size=70)
    small = RegressionForest(n_estimators=3, random_state=8).fit(X, y)
    big = RegressionForest(n_estimators=7, random_state=8).fit(X, y)
    for a, b in zip(small.trees_, big.trees_):
        assert (a.feature, a.left, a.right, a.n_samples) == (b.feature, b.left, b.right, b.n_samples)
        np.testing.assert_allclose(a.threshold, b.threshold)
        np.testing.assert_allclose(a.gain, b.gain, rtol=1e-12)
    np.testing.assert_allclose(big.predict(X[:5]),
                               [np.mean([t.predict_one(r) for t in big.trees_]) for r in X[:5]])
