import math
import time

import numpy as np
import pytest
from scipy.linalg import sqrtm

from otke.autodiff import backward, default_unroll_mode, forward_loss, grad_check, toy_problem
from otke.classifier import LinearClassifier
from otke.exceptions import NonFiniteError


def straight_line_loss(batch, nystrom, bank, classifier, n_iter):
    """Independent re-implementation with explicit loops and no shared helpers."""
    w = nystrom.anchors
    sigma = nystrom.spec.sigma

    def kappa(a, b):
        return math.exp(-sum((ai - bi) ** 2 for ai, bi in zip(a, b)) / (2 * sigma ** 2))

    k = len(w)
    Kww = np.array([[kappa(w[i], w[j]) for j in range(k)] for i in range(k)])
    whitener = np.linalg.inv(np.real(sqrtm(Kww)))
    q, p = bank.q, bank.p
    total = 0.0
    for b, n in enumerate(batch.lengths):
        X = batch.features[b, :n]
        psi = np.array([[kappa(x, wj) for wj in w] for x in X]) @ whitener
        blocks = []
        for z in bank.refs:
            E = [[math.exp(sum(psi[i] * z[j]) / bank.epsilon) for j in range(p)] for i in range(n)]
            v = [1.0] * p
            for _ in range(n_iter):
                u = [(1.0 / n) / sum(E[i][j] * v[j] for j in range(p)) for i in range(n)]
                v = [(1.0 / p) / sum(E[i][j] * u[i] for i in range(n)) for j in range(p)]
            P = np.array([[u[i] * E[i][j] * v[j] for j in range(p)] for i in range(n)])
            blocks.append(math.sqrt(p / q) * P.T @ psi)
        emb = np.concatenate([blk.ravel() for blk in blocks])
        logits = classifier.W @ emb + classifier.bias
        top = max(logits)
        lse = top + math.log(sum(math.exp(s - top) for s in logits))
        total += lse - logits[batch.labels[b]]
    return total / len(batch.lengths) + 0.5 * classifier.lam * float(np.sum(classifier.W ** 2))


def test_zero_classifier_gives_log_classes():
    batch, ny, bank, _ = toy_problem(n_classes=4)
    clf = LinearClassifier.zeros(4, bank.output_dim, lam=0.3)
    loss, _ = forward_loss(batch, ny, bank, clf)
    assert loss == pytest.approx(math.log(4), abs=1e-15)


def test_saturated_true_logit_leaves_penalty():
    batch, ny, bank, clf = toy_problem(B=1)
    W = 1e-3 * clf.W
    bias = np.zeros(2)
    bias[batch.labels[0]] = 60.0
    loss, _ = forward_loss(batch, ny, bank, LinearClassifier(W, bias, lam=0.1))
    assert loss == pytest.approx(0.05 * np.sum(W ** 2), abs=1e-20)


@pytest.mark.parametrize("mode", ["standard", "log"])
def test_loss_matches_straight_line_oracle(mode):
    batch, ny, bank, clf = toy_problem(seed=42, B=2, n=3, d=2, k=2, p=2, q=1, epsilon=1.0, n_iter=5)
    loss, _ = forward_loss(batch, ny, bank, clf, mode=mode)
    assert loss == pytest.approx(straight_line_loss(batch, ny, bank, clf, 5), abs=1e-12)


def test_multi_reference_loss_matches_oracle():
    batch, ny, bank, clf = toy_problem(seed=3, B=3, n=4, d=3, k=3, p=3, q=2, n_classes=3, n_iter=7)
    loss, _ = forward_loss(batch, ny, bank, clf)
    assert loss == pytest.approx(straight_line_loss(batch, ny, bank, clf, 7), abs=1e-12)


@pytest.mark.parametrize("n_iter", [10, 1])
def test_grad_check_full_graph(n_iter):
    err, blocks = grad_check(*toy_problem(seed=42, n_iter=n_iter), h=1e-5, samples=50, seed=42)
    assert err <= 1e-4
    assert set(blocks) == {"refs", "anchors", "W", "bias"}


@pytest.mark.parametrize(
    "overrides",
    [
        dict(epsilon=0.05, n_iter=10),  # log-domain unroll
        dict(sigma_pos=0.5, n=5),
        dict(q=3, p=3, k=3, d=3, B=3),
        dict(kernel="linear"),
        dict(n_classes=4, B=4, lam=0.0),
    ],
    ids=["log", "positional", "multi_ref", "linear", "four_classes"],
)
def test_grad_check_variants(overrides):
    err, _ = grad_check(*toy_problem(seed=7, **overrides), h=1e-5, samples=30, seed=1)
    assert err <= 1e-4


def test_grad_check_dot_product_pooling():
    batch, ny, bank, clf = toy_problem(seed=11, n_iter=10)
    err, _ = grad_check(batch, ny, bank.replace(pooling="dot_product"), clf, h=1e-5)
    assert err <= 1e-4


def test_grad_check_multilabel():
    batch, ny, bank, clf = toy_problem(seed=5, n_classes=3, B=3)
    labels = np.array([[1, 0, 1], [0, 0, 1], [1, 1, 0]], dtype=float)
    err, _ = grad_check(batch, ny, bank, clf, labels=labels, h=1e-5)
    assert err <= 1e-4


def test_classifier_only_blocks_are_nearly_exact():
    err, blocks = grad_check(*toy_problem(seed=42, n_iter=10), h=1e-5, blocks=("W", "bias"))
    assert err <= 1e-8
    assert set(blocks) == {"W", "bias"}


def test_zero_inputs_leave_only_the_penalty_gradient():
    batch, ny, bank, clf = toy_problem(kernel="linear", lam=0.7)
    batch.features[:] = 0.0
    _, tape = forward_loss(batch, ny, bank, clf)
    np.testing.assert_array_equal(backward(tape).W, 0.7 * clf.W)


def test_penalty_gradient_linear_in_lambda():
    batch, ny, bank, clf = toy_problem(lam=0.25)
    grads = []
    for lam in (0.25, 0.5):
        _, tape = forward_loss(batch, ny, bank, LinearClassifier(clf.W, clf.bias, lam))
        grads.append(backward(tape))
    data_part = grads[0].W - 0.25 * clf.W
    np.testing.assert_allclose(grads[1].W - data_part, 2 * (grads[0].W - data_part), rtol=1e-14)
    np.testing.assert_array_equal(grads[0].refs, grads[1].refs)


def test_gradient_shapes_and_determinism():
    problem = toy_problem(seed=9, q=2, p=3, k=4, d=3, n_classes=3, B=3)
    batch, ny, bank, clf = problem
    first = backward(forward_loss(*problem)[1])
    second = backward(forward_loss(*problem)[1])
    assert first.refs.shape == bank.refs.shape
    assert first.anchors.shape == ny.anchors.shape
    assert first.W.shape == clf.W.shape and first.bias.shape == clf.bias.shape
    for name in ("refs", "anchors", "W", "bias"):
        assert np.all(np.isfinite(first[name]))
        np.testing.assert_array_equal(first[name], second[name])


def test_backward_cost_is_bounded():
    problem = toy_problem(seed=1, B=16, n=30, d=8, k=16, p=8, n_iter=10)

    def best_of(fn, repeats=5):
        times = []
        for _ in range(repeats):
            start = time.perf_counter()
            fn()
            times.append(time.perf_counter() - start)
        return min(times)

    tape = forward_loss(*problem)[1]
    fwd = best_of(lambda: forward_loss(*problem))
    bwd = best_of(lambda: backward(tape))
    # loose sanity bound; timing on shared machines is noisy
    assert bwd <= 4 * fwd


def test_standard_unroll_overflow_raises():
    batch, ny, bank, clf = toy_problem(epsilon=1e-4, n_iter=3)
    with pytest.raises(NonFiniteError):
        forward_loss(batch, ny, bank, clf, mode="standard")


def test_default_unroll_mode():
    assert default_unroll_mode(0.05) == "log"
    assert default_unroll_mode(0.1) == "standard"


def test_grad_check_step_range():
    with pytest.raises(ValueError):
        grad_check(*toy_problem(), h=1e-3)
