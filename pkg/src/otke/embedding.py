"""Transport-plan pooling of a feature set against trainable references.

For a set ``psi`` of ``n`` embedded features (rows in R^k) and a reference
``z`` of ``p`` rows in R^k, the pooled output is ``sqrt(p) * P^T psi`` where
``P`` is the entropic plan for the similarity ``psi z^T``. With ``q``
references the ``q`` outputs are stacked and divided by ``sqrt(q)``.
"""
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionMismatch, EmptySet
from .kernels import embed_features
from .sinkhorn import sinkhorn, sinkhorn_batched

__all__ = [
    "POOLINGS",
    "ReferenceBank",
    "position_matrix",
    "pooling_weights",
    "embed_set",
    "embed_batch",
    "attention_scores",
    "dot_product_pool",
    "column_softmax",
]

POOLINGS = ("ot", "dot_product")


@dataclass(frozen=True, eq=False)
class ReferenceBank:
    """``q`` references of ``p`` supports each, plus the pooling settings.

    Attributes
    ----------
    refs : ndarray of shape (q, p, k)
    epsilon : float
    n_iter : int
        Sinkhorn iterations.
    sigma_pos : float or None
        Positional-encoding bandwidth; None disables it.
    pooling : {"ot", "dot_product"}
    mode : {"log", "standard"}
        Sinkhorn arithmetic.
    """

    refs: np.ndarray
    epsilon: float = 0.5
    n_iter: int = 100
    sigma_pos: float = None
    pooling: str = "ot"
    mode: str = "log"

    def __post_init__(self):
        refs = np.asarray(self.refs, dtype=np.float64)
        if refs.ndim == 2:
            refs = refs[None]
        if refs.ndim != 3 or min(refs.shape) < 1:
            raise DimensionMismatch(f"refs must have shape (q, p, k), got {refs.shape}")
        object.__setattr__(self, "refs", refs)
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.sigma_pos is not None and not self.sigma_pos > 0:
            raise ValueError(f"sigma_pos must be positive, got {self.sigma_pos}")
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")

    @property
    def q(self):
        return self.refs.shape[0]

    @property
    def p(self):
        return self.refs.shape[1]

    @property
    def k(self):
        return self.refs.shape[2]

    @property
    def output_dim(self):
        return self.refs.size

    def replace(self, **changes):
        fields = dict(
            refs=self.refs,
            epsilon=self.epsilon,
            n_iter=self.n_iter,
            sigma_pos=self.sigma_pos,
            pooling=self.pooling,
            mode=self.mode,
        )
        fields.update(changes)
        return ReferenceBank(**fields)


def position_matrix(n, p, sigma_pos):
    """``S_ij = exp(-(i/n - j/p)^2 / sigma_pos^2)`` with 1-based ``i``, ``j``."""
    i = np.arange(1, n + 1)[:, None] / n
    j = np.arange(1, p + 1)[None, :] / p
    return np.exp(-((i - j) ** 2) / sigma_pos ** 2)


def column_softmax(scores, mask=None):
    """Softmax over the rows of every column (axis -2), ignoring masked rows."""
    if mask is not None:
        scores = np.where(mask[..., None], scores, -np.inf)
    m = np.max(scores, axis=-2, keepdims=True)
    e = np.exp(scores - m)
    return e / e.sum(axis=-2, keepdims=True)


def _check_features(features, bank):
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatch(f"features must be 2-D, got shape {X.shape}")
    if X.shape[0] == 0:
        raise EmptySet("cannot embed an empty set")
    if X.shape[1] != bank.k:
        raise DimensionMismatch(f"features have width {X.shape[1]}, references have {bank.k}")
    return X


def pooling_weights(features, bank):
    """Per-reference weight matrices, positional encoding included.

    Returns an array of shape (q, n, p).
    """
    X = _check_features(features, bank)
    n = X.shape[0]
    K = np.einsum("ik,jpk->jip", X, bank.refs)
    if bank.pooling == "ot":
        P = np.stack([sinkhorn(Kj, bank.epsilon, bank.n_iter, mode=bank.mode).plan for Kj in K])
    else:
        P = column_softmax(K / bank.epsilon) / bank.p
    if bank.sigma_pos is not None:
        P = P * position_matrix(n, bank.p, bank.sigma_pos)
    return P


def _pool(P, X, q, p):
    # P: (..., q, n, p), X: (..., n, k) -> (..., q, p, k)
    return np.sqrt(p / q) * np.einsum("...jip,...ik->...jpk", P, X)


def embed_set(features, bank):
    """Embed one set of (already Nyström-mapped) features.

    Parameters
    ----------
    features : ndarray of shape (n, k)
    bank : ReferenceBank

    Returns
    -------
    ndarray of shape (q, p, k)
        Flatten with ``.ravel()`` for a linear classifier.
    """
    X = _check_features(features, bank)
    return _pool(pooling_weights(X, bank), X, bank.q, bank.p)


def dot_product_pool(features, bank):
    """:func:`embed_set` with the plan replaced by column-softmax scores.

    Each column of ``softmax(psi z^T / epsilon)`` is normalized over the
    inputs and divided by ``p``, so columns carry the same mass ``1/p`` as
    the transport plan.
    """
    return embed_set(features, bank.replace(pooling="dot_product"))


def attention_scores(features, bank):
    """``P P^T`` for each reference, shape (q, n, n)."""
    P = pooling_weights(features, bank)
    return np.einsum("jip,jlp->jil", P, P)


def embed_batch(batch, nystrom, bank):
    """Embed a padded batch in one vectorized pass.

    Parameters
    ----------
    batch : PaddedBatch
        Raw features of shape (B, n_max, d) with ``lengths``.
    nystrom : NystromMap or None
        When None, ``batch.features`` are used as ``psi`` directly.
    bank : ReferenceBank

    Returns
    -------
    ndarray of shape (B, q, p, k)
    """
    feats = np.asarray(batch.features, dtype=np.float64)
    lengths = np.asarray(batch.lengths)
    B, n_max, _ = feats.shape
    if np.any(lengths < 1):
        raise EmptySet("batch contains an empty set")
    mask = np.arange(n_max)[None, :] < lengths[:, None]
    if nystrom is not None:
        psi = embed_features(nystrom, feats.reshape(B * n_max, -1)).reshape(B, n_max, -1)
    else:
        psi = feats
    if psi.shape[2] != bank.k:
        raise DimensionMismatch(f"features have width {psi.shape[2]}, references have {bank.k}")
    psi = np.where(mask[..., None], psi, 0.0)
    q, p = bank.q, bank.p
    K = np.einsum("bik,jpk->bjip", psi, bank.refs)
    if bank.pooling == "ot":
        P = sinkhorn_batched(
            K.reshape(B * q, n_max, p),
            np.repeat(lengths, q),
            bank.epsilon,
            bank.n_iter,
            mode=bank.mode,
        ).reshape(B, q, n_max, p)
    else:
        P = column_softmax(K / bank.epsilon, np.repeat(mask[:, None], q, axis=1)) / p
    if bank.sigma_pos is not None:
        S = np.zeros((B, n_max, p))
        for b, n in enumerate(lengths):
            S[b, :n] = position_matrix(int(n), p, bank.sigma_pos)
        P = P * S[:, None]
    return _pool(P, psi, q, p)
