"""scikit-learn compatible wrappers.

Inputs ``X`` are sequences of 2-D arrays (one feature set per sample).
"""
import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_is_fitted

from .data import Dataset
from .embedding import ReferenceBank
from .training import OTKEModel, TrainConfig, mean_pool, train_supervised, train_unsupervised
from .training import fit_feature_maps
from .validation import check_sets

__all__ = ["OTKEmbedding", "MeanPoolEmbedding", "OTKEClassifier"]


class _ConfigMixin:
    def _config(self, **extra):
        return TrainConfig(
            p=self.n_supports,
            q=self.n_references,
            k=self.n_anchors,
            kernel=self.kernel,
            sigma=self.sigma,
            epsilon=self.epsilon,
            sinkhorn_iters=self.sinkhorn_iters,
            sigma_pos=self.sigma_pos,
            pooling=self.pooling,
            anchor_method=self.anchor_method,
            ref_method=self.ref_method,
            seed=self.random_state,
            **extra,
        )


class OTKEmbedding(_ConfigMixin, TransformerMixin, BaseEstimator):
    """Unsupervised optimal transport kernel embedding.

    Parameters
    ----------
    n_anchors : int, default=32
        Nyström anchors.
    n_supports : int, default=10
        Supports per reference.
    n_references : int, default=1
    kernel : {"gaussian", "linear"}, default="gaussian"
    sigma : float, default=1.0
        Gaussian bandwidth.
    epsilon : float, default=0.5
        Entropic regularization.
    sinkhorn_iters : int, default=100
    sigma_pos : float or None, default=None
        Width of the positional weighting; None disables it.
    pooling : {"ot", "dot_product"}, default="ot"
    anchor_method : {"kmeans", "random"}, default="kmeans"
    ref_method : {"kmeans", "wasserstein"}, default="kmeans"
    random_state : int, default=0

    Attributes
    ----------
    nystrom_ : NystromMap
    bank_ : ReferenceBank
    """

    def __init__(self, n_anchors=32, n_supports=10, n_references=1, kernel="gaussian", sigma=1.0,
                 epsilon=0.5, sinkhorn_iters=100, sigma_pos=None, pooling="ot",
                 anchor_method="kmeans", ref_method="kmeans", random_state=0):
        self.n_anchors = n_anchors
        self.n_supports = n_supports
        self.n_references = n_references
        self.kernel = kernel
        self.sigma = sigma
        self.epsilon = epsilon
        self.sinkhorn_iters = sinkhorn_iters
        self.sigma_pos = sigma_pos
        self.pooling = pooling
        self.anchor_method = anchor_method
        self.ref_method = ref_method
        self.random_state = random_state

    def fit(self, X, y=None):
        sets = check_sets(X)
        self.nystrom_, self.bank_ = fit_feature_maps(Dataset(sets, [0] * len(sets)), self._config())
        self.n_features_in_ = sets[0].shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "bank_")
        sets = check_sets(X, self.n_features_in_)
        return OTKEModel(self.nystrom_, self.bank_, None).embed(sets)


class MeanPoolEmbedding(TransformerMixin, BaseEstimator):
    """Mean of the Nyström features of each set (baseline)."""

    def __init__(self, n_anchors=32, kernel="gaussian", sigma=1.0, anchor_method="kmeans",
                 random_state=0):
        self.n_anchors = n_anchors
        self.kernel = kernel
        self.sigma = sigma
        self.anchor_method = anchor_method
        self.random_state = random_state

    def fit(self, X, y=None):
        from .kernels import KernelSpec, fit_nystrom

        sets = check_sets(X)
        pool = np.concatenate(sets, axis=0)
        self.nystrom_ = fit_nystrom(pool, self.n_anchors, KernelSpec(self.kernel, self.sigma),
                                    self.anchor_method, seed=self.random_state)
        self.n_features_in_ = sets[0].shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "nystrom_")
        return mean_pool(check_sets(X, self.n_features_in_), self.nystrom_)


class OTKEClassifier(_ConfigMixin, ClassifierMixin, BaseEstimator):
    """Embedding plus L2-regularized linear classifier.

    With ``supervised_epochs=0`` only the unsupervised model is fitted;
    otherwise it is the starting point of end-to-end training.

    Parameters
    ----------
    lam : float, default=1e-4
        L2 penalty of the classifier.
    supervised_epochs : int, default=0
    lr : float, default=0.01
    batch_size : int, default=64
    sup_sinkhorn_iters : int, default=10
    schedule : {"alternating", "joint"}, default="alternating"

    Other parameters are those of :class:`OTKEmbedding`.

    Attributes
    ----------
    model_ : OTKEModel
    classes_ : ndarray
    history_ : list of dict
        Per-epoch records of supervised training.
    """

    def __init__(self, n_anchors=32, n_supports=10, n_references=1, kernel="gaussian", sigma=1.0,
                 epsilon=0.5, sinkhorn_iters=100, sigma_pos=None, pooling="ot",
                 anchor_method="kmeans", ref_method="kmeans", lam=1e-4, supervised_epochs=0,
                 lr=0.01, batch_size=64, sup_sinkhorn_iters=10, schedule="alternating",
                 random_state=0):
        self.n_anchors = n_anchors
        self.n_supports = n_supports
        self.n_references = n_references
        self.kernel = kernel
        self.sigma = sigma
        self.epsilon = epsilon
        self.sinkhorn_iters = sinkhorn_iters
        self.sigma_pos = sigma_pos
        self.pooling = pooling
        self.anchor_method = anchor_method
        self.ref_method = ref_method
        self.lam = lam
        self.supervised_epochs = supervised_epochs
        self.lr = lr
        self.batch_size = batch_size
        self.sup_sinkhorn_iters = sup_sinkhorn_iters
        self.schedule = schedule
        self.random_state = random_state

    def fit(self, X, y, X_val=None, y_val=None):
        sets = check_sets(X)
        self._encoder = LabelEncoder().fit(y)
        self.classes_ = self._encoder.classes_
        config = self._config(lam=self.lam, epochs=self.supervised_epochs, lr=self.lr,
                              batch_size=self.batch_size,
                              sup_sinkhorn_iters=self.sup_sinkhorn_iters, schedule=self.schedule)
        C = len(self.classes_)
        train = Dataset(sets, self._encoder.transform(y), num_classes=C)
        val = None
        if X_val is not None:
            val = Dataset(check_sets(X_val, sets[0].shape[1]), self._encoder.transform(y_val),
                          num_classes=C)
        self.model_, _ = train_unsupervised(train, config)
        self.history_ = []
        if self.supervised_epochs > 0:
            self.model_, info = train_supervised(train, config, self.model_, val)
            self.history_ = info["history"]
        self.n_features_in_ = sets[0].shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return self.model_.decision_function(check_sets(X, self.n_features_in_))

    def predict_proba(self, X):
        from scipy.special import softmax

        return softmax(self.decision_function(X), axis=1)

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def transform(self, X):
        check_is_fitted(self, "model_")
        return self.model_.embed(check_sets(X, self.n_features_in_))
