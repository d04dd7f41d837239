import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from otke.classifier import LinearClassifier, cross_entropy
from otke.exceptions import DimensionMismatch


def blobs(rng, m=60, C=3, D=4, spread=0.3):
    centers = rng.normal(size=(C, D)) * 3
    y = np.arange(m) % C
    return centers[y] + spread * rng.normal(size=(m, D)), y


def test_zero_weights_loss_is_log_classes(rng):
    E, y = blobs(rng, C=5)
    loss, dW, dbias = LinearClassifier.zeros(5, 4, lam=1.0).objective(E, y)
    assert loss == pytest.approx(math.log(5), abs=1e-15)
    np.testing.assert_allclose(dbias, 0.0, atol=1e-15)


def test_cross_entropy_against_direct_formula(rng):
    logits = rng.normal(size=(4, 3))
    y = np.array([0, 2, 1, 2])
    direct = np.mean([math.log(sum(math.exp(v) for v in row)) - row[c] for row, c in zip(logits, y)])
    loss, grad = cross_entropy(logits, y)
    assert loss == pytest.approx(direct, rel=1e-14)
    np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-15)


def test_binary_cross_entropy_against_direct_formula(rng):
    logits = rng.normal(size=(3, 2))
    Y = np.array([[1, 0], [0, 0], [1, 1]], dtype=float)
    sig = 1 / (1 + np.exp(-logits))
    direct = -np.mean(Y * np.log(sig) + (1 - Y) * np.log(1 - sig))
    assert cross_entropy(logits, Y)[0] == pytest.approx(direct, rel=1e-13)


@given(st.integers(0, 2**16), st.booleans())
def test_objective_gradient_matches_central_differences(seed, multilabel):
    rng = np.random.default_rng(seed)
    E = rng.normal(size=(7, 3))
    y = (rng.random((7, 2)) < 0.5).astype(float) if multilabel else rng.integers(2, size=7)
    clf = LinearClassifier(rng.normal(size=(2, 3)), rng.normal(size=2), lam=0.3)
    _, dW, dbias = clf.objective(E, y)
    h = 1e-6
    for idx in np.ndindex(clf.W.shape):
        up, down = clf.copy(), clf.copy()
        up.W[idx] += h
        down.W[idx] -= h
        numeric = (up.objective(E, y)[0] - down.objective(E, y)[0]) / (2 * h)
        assert dW[idx] == pytest.approx(numeric, rel=1e-6, abs=1e-8)
    for c in range(2):
        up, down = clf.copy(), clf.copy()
        up.bias[c] += h
        down.bias[c] -= h
        numeric = (up.objective(E, y)[0] - down.objective(E, y)[0]) / (2 * h)
        assert dbias[c] == pytest.approx(numeric, rel=1e-6, abs=1e-8)


def test_fit_separates_blobs(rng):
    E, y = blobs(rng)
    clf = LinearClassifier.zeros(3, 4, lam=1e-3)
    clf.fit(E, y)
    assert np.mean(clf.predict(E) == y) == 1.0


def test_fit_history_never_increases(rng):
    E, y = blobs(rng, spread=2.0)
    history = LinearClassifier.zeros(3, 4, lam=1e-2).fit(E, y, max_iter=300)
    assert np.all(np.diff(history) <= 1e-10)


def test_fit_reaches_gradient_tolerance(rng):
    E, y = blobs(rng, spread=2.0)
    clf = LinearClassifier.zeros(3, 4, lam=1e-1)
    clf.fit(E, y, tol=1e-6, max_iter=20000)
    _, dW, dbias = clf.objective(E, y)
    assert np.sqrt(np.sum(dW ** 2) + np.sum(dbias ** 2)) < 1e-6


def test_huge_penalty_predicts_majority_class(rng):
    E = rng.normal(size=(50, 3))
    y = np.array([0] * 30 + [1] * 12 + [2] * 8)
    clf = LinearClassifier.zeros(3, 3, lam=1e6)
    clf.fit(E, y)
    assert np.abs(clf.W).max() < 1e-5
    assert np.all(clf.predict(E) == 0)


def test_warm_start_continues_from_weights(rng):
    E, y = blobs(rng, spread=2.0)
    clf = LinearClassifier.zeros(3, 4, lam=1e-2)
    first = clf.fit(E, y, max_iter=50)
    second = clf.fit(E, y, max_iter=50)
    assert second[0] == pytest.approx(first[-1], rel=1e-12)


def test_multilabel_fit_and_probabilities(rng):
    E = rng.normal(size=(40, 3))
    Y = np.stack([E[:, 0] > 0, E[:, 1] > 0], axis=1).astype(float)
    clf = LinearClassifier.zeros(2, 3, lam=1e-3)
    clf.fit(E, Y)
    proba = clf.predict_proba(E, multilabel=True)
    assert np.mean((proba > 0.5) == Y) >= 0.95
    np.testing.assert_allclose(clf.predict_proba(E).sum(axis=1), 1.0)


def test_decision_function_shape_check(rng):
    with pytest.raises(DimensionMismatch):
        LinearClassifier.zeros(2, 3).decision_function(np.ones((4, 5)))
