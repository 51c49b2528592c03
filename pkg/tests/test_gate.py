import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import roc_auc_score, roc_curve

from saferoute.errors import DegenerateError, InvalidArgumentError
from saferoute.gate import (
    GateConfig,
    GateModel,
    ScoredExample,
    auc,
    constant_gate,
    ece,
    empirical_roc,
    score,
    to_arrays,
    train_gate,
)


def _logistic_data(n=800, d=3, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d)) * np.array([1.0, 3.0, 0.5])[:d] + 2.0
    logit = 0.8 * X[:, 0] - 0.3 * X[:, 1] + 0.2 * X[:, 2 % d] - 1.0
    y = (rng.random(n) < 1 / (1 + np.exp(-logit))).astype(int)
    return X, y


def test_matches_sklearn_on_standardized_features():
    X, y = _logistic_data()
    gate = train_gate(X, y, GateConfig(l2_strength=1.0))
    assert gate.converged
    Z = (X - X.mean(0)) / X.std(0)
    ref = LogisticRegression(C=1.0, tol=1e-12, max_iter=10_000).fit(Z, y)
    assert np.allclose(gate.weights, ref.coef_.ravel(), atol=1e-6)
    assert gate.bias == pytest.approx(ref.intercept_[0], abs=1e-6)
    assert np.allclose(gate.predict(X), ref.predict_proba(Z)[:, 1], atol=1e-7)


def test_separable_training_auc_is_one():
    x = np.r_[np.linspace(-3, -1, 20), np.linspace(1, 3, 20)]
    y = np.r_[np.zeros(20), np.ones(20)].astype(int)
    gate = train_gate(x[:, None], y)
    assert auc(gate.predict(x[:, None]), y) == 1.0


def test_uninformative_features_give_chance_auc():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(5000, 4))
    y = (rng.random(5000) < 0.6).astype(int)
    gate = train_gate(X, y)
    assert auc(gate.predict(X), y) == pytest.approx(0.5, abs=0.03)


def test_deterministic_and_monotone_loss():
    X, y = _logistic_data(seed=4)
    a = train_gate(X, y, GateConfig(seed=7))
    b = train_gate(X, y, GateConfig(seed=7))
    assert np.array_equal(a.weights, b.weights) and a.bias == b.bias
    hist = np.array(a.loss_history)
    assert np.all(np.diff(hist) <= 0)


def test_single_class_and_bad_inputs():
    X = np.ones((5, 2))
    with pytest.raises(DegenerateError):
        train_gate(X, np.ones(5, dtype=int))
    with pytest.raises(InvalidArgumentError):
        train_gate(X, np.array([0, 1, 0, 1]))
    with pytest.raises(InvalidArgumentError):
        train_gate(np.array([[np.nan, 1.0], [0.0, 1.0]]), np.array([0, 1]))


def test_constant_gate_uses_prior():
    g = constant_gate(3, 0.3)
    assert np.allclose(g.predict(np.random.default_rng(0).normal(size=(10, 3))), 0.3)


def test_score_examples():
    zero = GateModel(np.zeros(2), 0.0, np.zeros(2), np.ones(2))
    assert score(zero, [3.0, -1.0]) == 0.5
    pos = GateModel(np.array([1.5, 0.0]), 0.1, np.zeros(2), np.ones(2))
    assert score(pos, [1.0, 0.0]) > score(pos, [0.5, 0.0])
    assert score(pos.with_platt(1.0, 0.0), [0.7, 2.0]) == score(pos, [0.7, 2.0])
    with pytest.raises(InvalidArgumentError):
        score(pos, [1.0, 2.0, 3.0])
    s = pos.predict(np.array([[1e6, 0.0], [-1e6, 0.0]]))
    assert np.all((s > 0) & (s < 1))


def test_model_round_trip_is_bit_exact():
    X, y = _logistic_data(seed=5)
    for g in (train_gate(X, y), train_gate(X, y).with_platt(0.9, -0.1)):
        buf = io.StringIO()
        g.dump(buf)
        back = GateModel.load(buf.getvalue().splitlines())
        assert np.array_equal(back.weights, g.weights) and back.bias == g.bias
        assert np.array_equal(back.feature_means, g.feature_means)
        assert np.array_equal(back.feature_scales, g.feature_scales)
        assert back.platt == g.platt
        assert np.array_equal(back.predict(X), g.predict(X))


def test_model_validation():
    with pytest.raises(InvalidArgumentError):
        GateModel(np.zeros(2), 0.0, np.zeros(3), np.ones(2))
    with pytest.raises(InvalidArgumentError):
        GateModel(np.zeros(2), 0.0, np.zeros(2), np.array([1.0, 0.0]))


def test_auc_examples():
    assert auc([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0]) == 0.75
    assert auc([0.4] * 6, [1, 0, 1, 0, 0, 1]) == 0.5
    assert auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    with pytest.raises(DegenerateError):
        auc([0.1, 0.2], [1, 1])


def test_scored_example_helpers():
    s, y = to_arrays([ScoredExample(0.2, 0), ScoredExample(0.9, 1)])
    assert s.tolist() == [0.2, 0.9] and y.tolist() == [0, 1]
    with pytest.raises(InvalidArgumentError):
        ScoredExample(1.2, 1)
    with pytest.raises(InvalidArgumentError):
        ScoredExample(0.5, 2)


@given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 1)), min_size=2, max_size=60))
def test_auc_matches_sklearn_with_ties(pairs):
    s = np.array([p[0] / 20 for p in pairs])
    y = np.array([p[1] for p in pairs])
    if y.min() == y.max():
        return
    assert auc(s, y) == pytest.approx(roc_auc_score(y, s), abs=1e-12)


@given(st.lists(st.integers(0, 1000), min_size=4, max_size=50, unique=True), st.integers(0, 2**31 - 1))
def test_auc_invariant_under_monotone_maps(s, seed):
    s = np.array(s) / 1000.0
    y = np.random.default_rng(seed).integers(0, 2, s.size)
    if y.min() == y.max():
        return
    base = auc(s, y)
    for f in (lambda v: 1 / (1 + np.exp(-5 * v)), lambda v: 3 * v - 2, lambda v: v**3):
        assert auc(f(s), y) == pytest.approx(base, abs=1e-12)


def test_ece_examples():
    y = np.array([1, 1, 0, 1, 0])
    assert ece(np.full(5, y.mean()), y) == pytest.approx(0.0, abs=1e-15)
    assert ece(y.astype(float), y) == 0.0
    assert ece([0.05, 0.05, 0.95, 0.95], [0, 1, 1, 1], 10) == pytest.approx(0.25, abs=1e-12)
    with pytest.raises(InvalidArgumentError):
        ece([], [])
    with pytest.raises(InvalidArgumentError):
        ece([0.5], [1], 0)


def test_ece_brute_force():
    rng = np.random.default_rng(9)
    for _ in range(50):
        n, bins = int(rng.integers(1, 40)), int(rng.integers(1, 15))
        s, y = rng.random(n), rng.integers(0, 2, n)
        total = 0.0
        for b in range(bins):
            lo, hi = b / bins, (b + 1) / bins
            m = (s >= lo) & ((s < hi) if b < bins - 1 else (s <= hi))
            if m.any():
                total += m.sum() / n * abs(s[m].mean() - y[m].mean())
        assert ece(s, y, bins) == pytest.approx(total, abs=1e-12)


def test_constant_prior_gate_is_calibrated_regardless_of_auc():
    y = np.random.default_rng(2).integers(0, 2, 400)
    assert ece(np.full(400, y.mean()), y) == pytest.approx(0.0, abs=1e-12)


def test_empirical_roc_examples():
    roc = empirical_roc([0.6, 0.4], [1, 0])
    assert list(zip(roc.fpr, roc.tpr)) == [(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
    perfect = empirical_roc([0.9, 0.8, 0.1], [1, 1, 0])
    assert (0.0, 1.0) in list(zip(perfect.fpr, perfect.tpr))
    with pytest.raises(DegenerateError):
        empirical_roc([0.1, 0.2], [0, 0])


def test_empirical_roc_matches_sklearn_and_auc():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(2, 60))
        s = rng.random(n)
        y = rng.integers(0, 2, n)
        if y.min() == y.max():
            continue
        roc = empirical_roc(s, y)
        fpr, tpr, _ = roc_curve(y, s, drop_intermediate=False)
        assert np.allclose(roc.fpr, fpr) and np.allclose(roc.tpr, tpr)
        assert roc.auc == pytest.approx(auc(s, y), abs=1e-12)
