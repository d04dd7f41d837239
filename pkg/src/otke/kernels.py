"""Elementwise kernels, the Nyström feature map and k-mer features."""
from dataclasses import dataclass

import numpy as np

from .clustering import kmeans, squared_distances
from .exceptions import (
    DimensionMismatch,
    InsufficientData,
    SequenceTooShort,
    UnknownToken,
)

__all__ = [
    "KernelSpec",
    "NystromMap",
    "kernel_eval",
    "fit_nystrom",
    "embed_features",
    "inverse_sqrt_psd",
    "kmer_features",
]

KERNELS = ("gaussian", "linear")


@dataclass(frozen=True)
class KernelSpec:
    """A Gaussian ``exp(-|x-y|^2 / (2 sigma^2))`` or linear kernel."""

    kind: str = "gaussian"
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ValueError(f"kernel kind must be one of {KERNELS}, got {self.kind!r}")
        if self.kind == "gaussian" and not self.sigma > 0:
            raise ValueError(f"gaussian bandwidth must be positive, got {self.sigma}")

    def __call__(self, X, Y):
        return kernel_eval(self, X, Y)

    def diag(self, X):
        """``kappa(x_i, x_i)`` for every row."""
        X = np.asarray(X, dtype=np.float64)
        if self.kind == "gaussian":
            return np.ones(X.shape[0])
        return np.einsum("ij,ij->i", X, X)


def kernel_eval(spec, X, Y):
    """Kernel matrix between the rows of ``X`` (n, d) and ``Y`` (m, d)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape[1] != Y.shape[1]:
        raise DimensionMismatch(f"feature widths differ: {X.shape[1]} vs {Y.shape[1]}")
    if spec.kind == "linear":
        return X @ Y.T
    return np.exp(-squared_distances(X, Y) / (2.0 * spec.sigma ** 2))


def inverse_sqrt_psd(A, ridge):
    """``A^{-1/2}`` for symmetric PSD ``A``, eigenvalues clamped below at ``ridge``.

    Returns the matrix together with the eigendecomposition used, which the
    backward pass needs.
    """
    A = 0.5 * (A + A.T)
    lam, U = np.linalg.eigh(A)
    lam_c = np.maximum(lam, ridge) if ridge > 0 else lam
    if np.any(lam_c <= 0):
        raise np.linalg.LinAlgError("matrix is singular; use a positive ridge")
    return (U * lam_c ** -0.5) @ U.T, lam, U


@dataclass(frozen=True, eq=False)
class NystromMap:
    """Finite-dimensional map ``psi(x) = kappa(w, w)^{-1/2} kappa(w, x)``.

    Attributes
    ----------
    anchors : ndarray of shape (k, d)
    spec : KernelSpec
    ridge : float
        Floor applied to the eigenvalues of ``kappa(w, w)``.
    whitener : ndarray of shape (k, k)
    """

    anchors: np.ndarray
    spec: KernelSpec
    ridge: float = 1e-6
    whitener: np.ndarray = None

    def __post_init__(self):
        anchors = np.atleast_2d(np.asarray(self.anchors, dtype=np.float64))
        object.__setattr__(self, "anchors", anchors)
        if self.whitener is None:
            gram = kernel_eval(self.spec, anchors, anchors)
            whitener, _, _ = inverse_sqrt_psd(gram, self.ridge)
            object.__setattr__(self, "whitener", whitener)

    @property
    def n_components(self):
        return self.anchors.shape[0]

    @property
    def n_features(self):
        return self.anchors.shape[1]

    def embed(self, X):
        return embed_features(self, X)


def embed_features(nystrom, X):
    """Rows ``psi(x_i)``; returns an (n, k) array."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != nystrom.n_features:
        raise DimensionMismatch(
            f"features have width {X.shape[1]}, Nystrom anchors have {nystrom.n_features}"
        )
    return kernel_eval(nystrom.spec, X, nystrom.anchors) @ nystrom.whitener


def fit_nystrom(features, k, spec=None, method="kmeans", seed=0, ridge=1e-6, max_iter=100):
    """Choose ``k`` anchors from a pool of feature vectors.

    Parameters
    ----------
    features : ndarray of shape (N, d)
    k : int
    spec : KernelSpec, optional
        Defaults to a unit-bandwidth Gaussian.
    method : {"kmeans", "random"}
        K-means centroids, or ``k`` distinct rows drawn uniformly.
    seed : int
    ridge : float, default=1e-6

    Returns
    -------
    NystromMap
    """
    spec = spec or KernelSpec()
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {X.shape}")
    distinct = np.unique(X, axis=0)
    if distinct.shape[0] < k:
        raise InsufficientData(
            f"need at least {k} distinct feature vectors, got {distinct.shape[0]}"
        )
    rng = np.random.default_rng(seed)
    if method == "kmeans":
        anchors = kmeans(X, k, max_iter=max_iter, seed=rng).centers
    elif method == "random":
        anchors = distinct[np.sort(rng.choice(distinct.shape[0], size=k, replace=False))]
    else:
        raise ValueError(f"unknown anchor method {method!r}")
    return NystromMap(anchors, spec, ridge)


def kmer_features(sequence, alphabet, kmer_size):
    """One-hot k-mers of a token string, each row scaled to unit norm.

    Returns an array of shape ``(len(sequence) - kmer_size + 1,
    len(alphabet) * kmer_size)``.
    """
    index = {tok: i for i, tok in enumerate(alphabet)}
    if len(sequence) < kmer_size:
        raise SequenceTooShort(
            f"sequence of length {len(sequence)} is shorter than kmer_size={kmer_size}"
        )
    try:
        codes = np.array([index[tok] for tok in sequence], dtype=np.intp)
    except KeyError as exc:
        raise UnknownToken(f"token {exc.args[0]!r} is not in the alphabet") from None
    a = len(alphabet)
    onehot = np.zeros((len(codes), a))
    onehot[np.arange(len(codes)), codes] = 1.0
    n = len(codes) - kmer_size + 1
    rows = np.concatenate([onehot[j : j + n] for j in range(kmer_size)], axis=1)
    return rows / np.sqrt(kmer_size)
