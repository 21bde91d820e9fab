import numpy as np
import pytest
from hypothesis import given, strategies as st

from smallarea import forest
from smallarea.forest import ForestHyper


def plateau_data():
    x = np.concatenate([np.linspace(-2, -0.01, 50), np.linspace(0, 2, 50)])[:, None]
    y = np.where(x[:, 0] < 0, 0.0, 10.0)
    return x, y


def test_plateau_recovery():
    X, y = plateau_data()
    f = forest.fit(X, y, ForestHyper(B=500, mtry=1, nodesize=1, seed=1))
    lo, _ = forest.predict(f, [-1.0])
    hi, _ = forest.predict(f, [1.0])
    assert abs(lo) <= 0.5 and abs(hi - 10) <= 0.5


def test_single_row_forest():
    f = forest.fit(np.array([[1.0, 2.0]]), np.array([3.5]), ForestHyper(B=5, mtry=1))
    np.testing.assert_array_equal(f.predict(np.random.default_rng(0).normal(size=(4, 2))), 3.5)


def test_one_leaf_tree_is_bootstrap_mean():
    g = np.random.default_rng(1)
    X, y = g.normal(size=(8, 2)), g.normal(size=8)
    f = forest.fit(X, y, ForestHyper(B=1, mtry=1, nodesize=8, seed=2))
    mult = f.mult[0][np.argsort(f._canon)]
    assert forest.predict(f, X[0])[0] == pytest.approx(mult @ y / mult.sum(), abs=1e-12)


def test_hand_multiplicities():
    X = np.array([[0.0], [1.0], [2.0]])
    f = forest.fit(X, np.array([1.0, 5.0, 3.0]), ForestHyper(B=1, mtry=1, nodesize=3),
                   multiplicities=[[2, 0, 1]])
    point, w = forest.predict(f, [0.3])
    np.testing.assert_allclose(w, [2 / 3, 0, 1 / 3], atol=1e-15)
    assert point == pytest.approx(2 / 3 + 1.0)


def test_convexity_and_weight_sums():
    g = np.random.default_rng(3)
    X = g.normal(size=(60, 4))
    y = np.sin(X[:, 0]) * 3 + X[:, 1] ** 2 + g.normal(size=60)
    f = forest.fit(X, y, ForestHyper(B=200, mtry=2, nodesize=5, seed=4))
    Q = g.normal(scale=3, size=(10_000, 4))
    W = f.weights(Q)
    assert np.all(W >= 0)
    assert np.max(np.abs(W.sum(axis=1) - 1)) <= 1e-12
    pred = f.predict(Q)
    assert pred.min() >= y.min() - 1e-12 and pred.max() <= y.max() + 1e-12


def test_row_order_invariance_and_shift():
    g = np.random.default_rng(5)
    X, y = g.normal(size=(40, 3)), g.normal(size=40)
    h = ForestHyper(B=50, mtry=2, nodesize=3, seed=6)
    Q = g.normal(size=(20, 3))
    base = forest.fit(X, y, h).predict(Q)
    perm = g.permutation(40)
    np.testing.assert_allclose(forest.fit(X[perm], y[perm], h).predict(Q), base, atol=1e-12)
    f0, f1 = forest.fit(X, y, h), forest.fit(X, y + 7.0, h)
    np.testing.assert_allclose(f1.predict(Q), base + 7.0, atol=1e-10)
    np.testing.assert_array_equal(f0.weights(Q), f1.weights(Q))


def test_leaves_partition_bootstrap():
    g = np.random.default_rng(7)
    X, y = g.normal(size=(30, 2)), g.normal(size=30)
    f = forest.fit(X, y, ForestHyper(B=20, mtry=1, nodesize=4, seed=8))
    for b in range(f.B):
        rows = f.leaf_rows[f.row_off[b]:f.row_off[b + 1]]
        boot = np.flatnonzero(f.mult[b] > 0)
        assert sorted(rows) == sorted(boot)


def test_errors():
    with pytest.raises(ValueError):
        forest.fit(np.zeros((0, 2)), np.zeros(0), ForestHyper(B=2, mtry=1))
    f = forest.fit(np.zeros((3, 2)), np.arange(3.0), ForestHyper(B=2, mtry=1))
    with pytest.raises(ValueError):
        forest.predict(f, [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        forest.importance_pvalues(np.zeros((3, 2)), np.arange(3.0), ForestHyper(B=2, mtry=1), 0)


def test_importance_strong_signal_minimal_p():
    g = np.random.default_rng(9)
    X = g.normal(size=(80, 3))
    y = 10 * X[:, 0] + 1e-3 * g.normal(size=80)
    p, obs = forest.importance_pvalues(X, y, ForestHyper(B=100, mtry=2, nodesize=5, seed=1),
                                       n_perm=20, seed=2)
    assert p[0] == pytest.approx(1 / 21)
    assert obs[0] > obs[1:].max()


def test_importance_single_permutation_support():
    g = np.random.default_rng(10)
    X, y = g.normal(size=(30, 2)), g.normal(size=30)
    p, _ = forest.importance_pvalues(X, y, ForestHyper(B=30, mtry=1, seed=3), n_perm=1, seed=4)
    assert set(p) <= {0.5, 1.0}


def test_importance_null_calibration():
    # pure-noise covariates: selection rate near 5%
    hits, total = 0, 0
    for r in range(12):
        g = np.random.default_rng(100 + r)
        X, y = g.normal(size=(40, 4)), g.normal(size=40)
        p, _ = forest.importance_pvalues(X, y, ForestHyper(B=40, mtry=2, nodesize=5, seed=r),
                                         n_perm=19, seed=r)
        hits += int((p < 0.05 + 1e-12).sum())
        total += 4
    assert hits / total <= 0.2


@given(st.integers(2, 25), st.integers(1, 3), st.integers(1, 6), st.integers(0, 10_000))
def test_prediction_bounds_property(m, p, nodesize, seed):
    g = np.random.default_rng(seed)
    X, y = g.normal(size=(m, p)), g.normal(size=m)
    f = forest.fit(X, y, ForestHyper(B=10, mtry=min(2, p), nodesize=nodesize, seed=seed))
    Q = g.normal(scale=2, size=(25, p))
    W = f.weights(Q)
    assert np.allclose(W.sum(axis=1), 1.0, atol=1e-12)
    pr = f.predict(Q)
    assert np.all(pr >= y.min() - 1e-12) and np.all(pr <= y.max() + 1e-12)
