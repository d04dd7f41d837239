import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from otke.clustering import kmeans
from otke.embedding import ReferenceBank
from otke.exceptions import DimensionMismatch, InsufficientData
from otke.references import barycenter_objective, fit_refs_kmeans, fit_refs_wasserstein


def spread_points(rng, n, k, scale=3.0):
    return rng.normal(size=(n, k)) * scale


# fit_refs_kmeans

def test_kmeans_refs_on_exactly_p_points():
    X = np.array([[3.0, 0.0], [-1.0, 2.0], [1.0, 5.0]])
    bank = fit_refs_kmeans(X, p=3)
    np.testing.assert_array_equal(bank.refs[0], X[np.argsort(X[:, 0])])


def test_kmeans_refs_identical_points():
    X = np.tile([[0.5, -2.0, 1.0]], (20, 1))
    bank = fit_refs_kmeans(X, p=3)
    np.testing.assert_array_equal(bank.refs[0], np.tile(X[:1], (3, 1)))
    assert kmeans(X, 3).inertia == 0.0


def test_kmeans_refs_recover_blob_means(rng):
    means = np.array([[0.0, 0.0], [5.0, 5.0]])
    X = np.concatenate([m + 0.01 * rng.normal(size=(50, 2)) for m in means])
    refs = fit_refs_kmeans(X, p=2, seed=4).refs[0]
    assert np.abs(refs - means).max() <= 0.1


def test_kmeans_refs_errors(rng):
    with pytest.raises(InsufficientData):
        fit_refs_kmeans(rng.normal(size=(5, 2)), p=3, q=2, sets=[rng.normal(size=(5, 2))])
    with pytest.raises(ValueError):
        fit_refs_kmeans(rng.normal(size=(50, 2)), p=3, q=2)
    with pytest.raises(DimensionMismatch):
        fit_refs_kmeans(np.ones(10), p=2)


def test_kmeans_refs_multi_reference(rng):
    sets = [t + 0.1 * rng.normal(size=(6, 2)) for t in ([[0.0, 0.0]] * 5 + [[20.0, 0.0]] * 5)]
    bank = fit_refs_kmeans(np.concatenate(sets), p=2, q=2, sets=sets, seed=0)
    assert bank.refs.shape == (2, 2, 2)
    centres = sorted(float(r[:, 0].mean()) for r in bank.refs)
    assert centres[0] == pytest.approx(0.0, abs=0.5)
    assert centres[1] == pytest.approx(20.0, abs=0.5)


def test_lloyd_inertia_non_increasing(rng):
    X = rng.normal(size=(300, 3))
    history = kmeans(X, 8, seed=1).inertia_history
    assert np.all(np.diff(history) <= 1e-9 * history[0])


def test_refs_deterministic_given_seed(rng):
    sets = [rng.normal(size=(int(rng.integers(3, 8)), 2)) for _ in range(12)]
    pool = np.concatenate(sets)
    a = fit_refs_kmeans(pool, p=3, q=2, sets=sets, seed=5).refs
    b = fit_refs_kmeans(pool, p=3, q=2, sets=sets, seed=5).refs
    np.testing.assert_array_equal(a, b)
    wa = fit_refs_wasserstein(sets, 3, 2, seed=5, outer_iters=3)
    wb = fit_refs_wasserstein(sets, 3, 2, seed=5, outer_iters=3)
    np.testing.assert_array_equal(wa.bank.refs, wb.bank.refs)
    np.testing.assert_array_equal(wa.labels, wb.labels)


# fit_refs_wasserstein

def test_single_set_is_its_own_barycenter(rng):
    X = spread_points(rng, 5, 2)
    result = fit_refs_wasserstein([X], p=5, q=1, epsilon=0.01, outer_iters=10, seed=0)
    z = result.bank.refs[0]
    # match centroid rows to member rows before comparing
    order = np.argmin(((z[:, None] - X[None]) ** 2).sum(-1), axis=1)
    assert sorted(order) == list(range(5))
    assert np.abs(z - X[order]).max() <= 1e-2


def test_identical_members_beat_member_as_reference(rng):
    X = spread_points(rng, 6, 2, scale=1.0)
    sets = [X.copy() for _ in range(4)]
    for p in (4, 6):
        result = fit_refs_wasserstein(sets, p=p, q=1, epsilon=0.01, seed=1)
        fitted = barycenter_objective(result.bank, sets, epsilon=0.01)[0]
        # candidate reference: the member itself, or p of its rows when p < n
        baseline = barycenter_objective(ReferenceBank(X[:p], epsilon=0.01), sets)[0]
        assert fitted <= baseline + 1e-6


def test_two_families_are_separated(rng):
    templates = [rng.normal(size=(4, 2)), rng.normal(size=(4, 2)) + 10.0]
    family = np.array([0, 1] * 6)
    sets = [templates[f] + 0.1 * rng.normal(size=(4, 2)) for f in family]
    result = fit_refs_wasserstein(sets, p=4, q=2, epsilon=0.1, seed=3)
    labels = result.labels
    assert len(set(labels[family == 0])) == 1
    assert len(set(labels[family == 1])) == 1
    assert labels[0] != labels[1]


@given(st.integers(0, 2**16), st.integers(1, 3))
def test_wasserstein_objective_non_increasing(seed, q):
    rng = np.random.default_rng(seed)
    sets = [rng.normal(size=(int(rng.integers(2, 7)), 2)) for _ in range(6)]
    history = fit_refs_wasserstein(sets, p=3, q=q, epsilon=0.5, outer_iters=5, seed=seed).objective_history
    assert len(history) == 6
    assert np.all(np.diff(history) <= 1e-8 * max(1.0, abs(history[0])))


def test_wasserstein_errors(rng):
    with pytest.raises(InsufficientData):
        fit_refs_wasserstein([], p=2)
    with pytest.raises(InsufficientData):
        fit_refs_wasserstein([rng.normal(size=(3, 2))], p=2, q=2)
    with pytest.raises(DimensionMismatch):
        fit_refs_wasserstein([rng.normal(size=(3, 2)), rng.normal(size=(3, 3))], p=2)
    with pytest.raises(ValueError):
        fit_refs_wasserstein([rng.normal(size=(3, 2))], p=0)


# barycenter_objective

def test_objective_of_set_against_itself(rng):
    X = spread_points(rng, 5, 3)
    value = barycenter_objective(ReferenceBank(X, epsilon=0.01), [X])[0]
    assert 0 <= value <= 1e-3 * np.mean(X ** 2)


def test_objective_of_translated_set(rng):
    X = spread_points(rng, 5, 2)
    t = np.array([0.3, -0.2])
    value = barycenter_objective(ReferenceBank(X, epsilon=0.01), [X + t])[0]
    assert value == pytest.approx(t @ t, rel=0.05)


@given(st.integers(0, 2**16))
def test_objective_non_negative(seed):
    rng = np.random.default_rng(seed)
    bank = ReferenceBank(rng.normal(size=(2, 3, 2)), epsilon=0.3)
    sets = [rng.normal(size=(4, 2)) for _ in range(3)]
    assert np.all(barycenter_objective(bank, sets) >= 0)


def test_objective_width_mismatch(rng):
    with pytest.raises(DimensionMismatch):
        barycenter_objective(ReferenceBank(rng.normal(size=(3, 2))), [np.ones((2, 3))])
