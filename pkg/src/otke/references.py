"""Unsupervised learning of references.

Two routes: K-means on the pooled features of all training sets, and a
2-Wasserstein K-means over whole sets whose centroids are free-support
barycenters. Transport between a set and a reference here uses the squared
Euclidean cost in the embedded space, unlike the embedding itself which
uses the negative dot product.
"""
from dataclasses import dataclass

import numpy as np

from .clustering import kmeans, squared_distances
from .embedding import ReferenceBank
from .exceptions import DimensionMismatch, InsufficientData
from .sinkhorn import entropy, sinkhorn

__all__ = [
    "fit_refs_kmeans",
    "fit_refs_wasserstein",
    "barycenter_objective",
    "w2_plan",
    "WassersteinKMeansResult",
]


def w2_plan(X, z, epsilon, n_iter=100):
    """Entropic plan between ``X`` and ``z`` for the cost ``|x_i - z_j|^2``.

    Returns ``(plan, cost_matrix)``.
    """
    C = squared_distances(X, z)
    return sinkhorn(-C, epsilon, n_iter).plan, C


def _regularized(P, C, epsilon):
    return float(np.sum(P * C) - epsilon * entropy(P))


def _centroid_from_set(X, p, rng):
    # p supports drawn from one set; K-means when it has enough distinct rows
    if np.unique(X, axis=0).shape[0] >= p:
        return kmeans(X, p, seed=rng).centers
    return X[rng.choice(X.shape[0], size=p, replace=True)].copy()


def _canonical(centers):
    return centers[np.lexsort(centers.T[::-1])]


def fit_refs_kmeans(
    features,
    p,
    q=1,
    seed=0,
    sets=None,
    epsilon=0.5,
    n_iter=100,
    max_iter=100,
    **bank_kwargs,
):
    """References from K-means centroids of pooled features.

    Parameters
    ----------
    features : ndarray of shape (N, k)
        All embedded features of the training sets.
    p : int
        Supports per reference.
    q : int, default=1
        Number of references. For ``q > 1`` the ``sets`` are first split
        into ``q`` groups by one round of Wasserstein assignment, then each
        group's features are clustered separately.
    sets : list of ndarray, optional
        Required when ``q > 1``.
    epsilon, n_iter :
        Sinkhorn settings stored in the bank (and used for the assignment).

    Returns
    -------
    ReferenceBank
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatch(f"features must be 2-D, got shape {X.shape}")
    if X.shape[0] < p * q:
        raise InsufficientData(f"need at least p*q={p * q} features, got {X.shape[0]}")
    rng = np.random.default_rng(seed)
    if q == 1:
        refs = _canonical(kmeans(X, p, max_iter=max_iter, seed=rng).centers)[None]
        return ReferenceBank(refs, epsilon=epsilon, n_iter=n_iter, **bank_kwargs)
    if sets is None:
        raise ValueError("q > 1 requires the member sets for the assignment round")
    result = fit_refs_wasserstein(
        sets, p, q, epsilon=epsilon, inner_iters=n_iter, outer_iters=0, seed=rng
    )
    refs = []
    for j in range(q):
        members = [s for s, lab in zip(sets, result.labels) if lab == j]
        pool = np.concatenate(members, axis=0) if members else X
        if pool.shape[0] < p:
            pool = X
        refs.append(_canonical(kmeans(pool, p, max_iter=max_iter, seed=rng).centers))
    return ReferenceBank(np.stack(refs), epsilon=epsilon, n_iter=n_iter, **bank_kwargs)


@dataclass
class WassersteinKMeansResult:
    """Output of :func:`fit_refs_wasserstein`.

    ``objective_history[t]`` is ``sum_i OT_eps(x^i, z_{label_i})`` right after
    the assignment step of round ``t``, where ``OT_eps`` is the entropic
    transport cost ``<P, C> - eps H(P)``; the last entry is measured after
    the final centroid update.
    """

    bank: ReferenceBank
    labels: np.ndarray
    objective_history: list


def _init_centroids(sets, p, q, epsilon, n_iter, rng):
    first = int(rng.integers(len(sets)))
    centroids = [_centroid_from_set(sets[first], p, rng)]
    if q == 1:
        # single reference: start from K-means over all features
        pool = np.concatenate(sets, axis=0)
        if pool.shape[0] >= p:
            centroids = [kmeans(pool, p, seed=rng).centers]
        return centroids
    while len(centroids) < q:
        d = np.array(
            [min(max(_cost(X, z, epsilon, n_iter), 0.0) for z in centroids) for X in sets]
        )
        probs = d / d.sum() if d.sum() > 0 else np.full(len(sets), 1.0 / len(sets))
        pick = int(rng.choice(len(sets), p=probs))
        centroids.append(_centroid_from_set(sets[pick], p, rng))
    return centroids


def _cost(X, z, epsilon, n_iter):
    P, C = w2_plan(X, z, epsilon, n_iter)
    return float(np.sum(P * C))


def fit_refs_wasserstein(
    sets,
    p,
    q=1,
    epsilon=0.5,
    inner_iters=100,
    outer_iters=10,
    seed=0,
    **bank_kwargs,
):
    """2-Wasserstein K-means with free-support barycenter centroids.

    Each round assigns every set to the reference with the smallest entropic
    transport cost, then moves each support to the plan-weighted mean of the
    features sent to it::

        z_k <- sum_i sum_j P^i_jk x^i_j / sum_i sum_j P^i_jk

    Parameters
    ----------
    sets : list of ndarray, each (n_i, k)
    p, q : int
    epsilon : float
    inner_iters : int, default=100
        Sinkhorn iterations per transport problem.
    outer_iters : int, default=10
        Assignment/update rounds.
    seed : int or Generator

    Returns
    -------
    WassersteinKMeansResult
    """
    sets = [np.asarray(X, dtype=np.float64) for X in sets]
    if not sets:
        raise InsufficientData("need at least one member set")
    if p < 1 or q < 1:
        raise ValueError("p and q must be >= 1")
    if len(sets) < q:
        raise InsufficientData(f"need at least q={q} member sets, got {len(sets)}")
    k = sets[0].shape[1]
    if any(X.ndim != 2 or X.shape[1] != k for X in sets):
        raise DimensionMismatch("member sets must share their feature width")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    centroids = _init_centroids(sets, p, q, epsilon, inner_iters, rng)

    def assign(centroids):
        plans = [[w2_plan(X, z, epsilon, inner_iters) for z in centroids] for X in sets]
        obj = np.array([[_regularized(P, C, epsilon) for P, C in row] for row in plans])
        return plans, obj, np.argmin(obj, axis=1)

    history = []
    plans, obj, labels = assign(centroids)
    history.append(float(obj[np.arange(len(sets)), labels].sum()))
    for _ in range(outer_iters):
        counts = np.bincount(labels, minlength=q)
        for j in np.flatnonzero(counts == 0):
            # re-seed from the worst-served member of the largest cluster
            big = int(np.argmax(np.bincount(labels, minlength=q)))
            members = np.flatnonzero(labels == big)
            far = members[int(np.argmax(obj[members, big]))]
            centroids[j] = _centroid_from_set(sets[far], p, rng)
            labels[far] = j
            plans[far][j] = w2_plan(sets[far], centroids[j], epsilon, inner_iters)
        for j in range(q):
            members = np.flatnonzero(labels == j)
            num = np.zeros((p, k))
            den = np.zeros(p)
            for i in members:  # fixed order keeps the reduction deterministic
                P = plans[i][j][0]
                num += P.T @ sets[i]
                den += P.sum(axis=0)
            centroids[j] = num / den[:, None]
        plans, obj, labels = assign(centroids)
        history.append(float(obj[np.arange(len(sets)), labels].sum()))
    bank = ReferenceBank(np.stack(centroids), epsilon=epsilon, n_iter=inner_iters, **bank_kwargs)
    return WassersteinKMeansResult(bank, labels, history)


def barycenter_objective(bank, sets, epsilon=None, n_iter=None):
    """Mean entropic ``W2^2`` estimate ``(1/m) sum_i <P(x^i, z), d^2>`` per reference.

    Returns an array of length ``q``.
    """
    epsilon = bank.epsilon if epsilon is None else epsilon
    n_iter = bank.n_iter if n_iter is None else n_iter
    out = np.zeros(bank.q)
    for X in sets:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != bank.k:
            raise DimensionMismatch(f"set of shape {X.shape} does not match width {bank.k}")
        for j in range(bank.q):
            out[j] += _cost(X, bank.refs[j], epsilon, n_iter)
    return out / len(sets)
