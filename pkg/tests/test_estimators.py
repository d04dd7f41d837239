import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline
from sklearn.linear_model import LogisticRegression

from otke.data import SynthSpec, generate_synthetic
from otke.estimators import MeanPoolEmbedding, OTKEClassifier, OTKEmbedding
from otke.exceptions import DimensionMismatch, EmptySet, NonFiniteError
from otke.validation import check_set, check_sets

SPEC = SynthSpec(classes=3, motifs_per_class=2, motif_dim=6, set_length_range=(8, 15),
                 motif_count_range=(2, 4), seed=1)


@pytest.fixture(scope="module")
def data():
    train, val, _ = generate_synthetic(SPEC, 90, 30)
    names = np.array(["alpha", "beta", "gamma"])
    return train.sets, names[train.y], val.sets, names[val.y]


def small_classifier(**kwargs):
    params = dict(n_anchors=6, n_supports=4, kernel="linear", lam=1e-3)
    params.update(kwargs)
    return OTKEClassifier(**params)


def test_params_round_trip_through_clone():
    est = OTKEmbedding(n_anchors=7, epsilon=0.2, sigma_pos=0.5)
    copy = clone(est)
    assert copy.get_params() == est.get_params()
    assert copy.get_params()["sigma_pos"] == 0.5
    clf = small_classifier(supervised_epochs=2)
    assert clone(clf).get_params() == clf.get_params()


def test_embedding_transform_shape(data):
    X, _, Xv, _ = data
    est = OTKEmbedding(n_anchors=6, n_supports=4, n_references=2, kernel="linear").fit(X)
    assert est.transform(Xv).shape == (len(Xv), 2 * 4 * 6)
    assert est.n_features_in_ == 6
    np.testing.assert_array_equal(est.fit_transform(X), est.transform(X))


def test_mean_pool_embedding(data):
    X, _, _, _ = data
    est = MeanPoolEmbedding(n_anchors=5, kernel="linear").fit(X)
    assert est.transform(X[:4]).shape == (4, 5)


def test_embedding_in_pipeline(data):
    X, y, Xv, yv = data
    pipe = make_pipeline(OTKEmbedding(n_anchors=6, n_supports=4, kernel="linear"),
                         LogisticRegression(max_iter=2000))
    pipe.fit(X, y)
    assert pipe.score(Xv, yv) > 0.8


def test_classifier_string_labels(data):
    X, y, Xv, yv = data
    clf = small_classifier().fit(X, y)
    assert set(clf.classes_) == {"alpha", "beta", "gamma"}
    assert set(clf.predict(Xv)) <= set(clf.classes_)
    assert clf.score(X, y) >= 0.99
    proba = clf.predict_proba(Xv)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert clf.transform(Xv).shape == (len(Xv), 24)
    assert clf.history_ == []


def test_classifier_supervised_epochs(data):
    X, y, Xv, yv = data
    clf = small_classifier(supervised_epochs=2).fit(X, y, Xv, yv)
    assert [r["epoch"] for r in clf.history_] == [1, 2]


def test_not_fitted():
    with pytest.raises(NotFittedError):
        OTKEmbedding().transform([np.ones((2, 2))])
    with pytest.raises(NotFittedError):
        small_classifier().predict([np.ones((2, 2))])


def test_transform_width_mismatch(data):
    X, _, _, _ = data
    est = OTKEmbedding(n_anchors=6, n_supports=4, kernel="linear").fit(X)
    with pytest.raises(DimensionMismatch):
        est.transform([np.ones((3, 5))])


def test_input_validation():
    np.testing.assert_array_equal(check_set([[1, 2]]), [[1.0, 2.0]])
    with pytest.raises(EmptySet):
        check_set(np.zeros((0, 2)))
    np.testing.assert_array_equal(check_set(np.ones(3)), np.ones((1, 3)))
    with pytest.raises(DimensionMismatch):
        check_set(np.ones((2, 2, 2)))
    with pytest.raises(NonFiniteError):
        check_set([[np.nan, 1.0]])
    with pytest.raises(DimensionMismatch):
        check_sets([np.ones((2, 2)), np.ones((2, 3))])
    with pytest.raises(DimensionMismatch):
        check_sets([np.ones((2, 2))], d=3)
