"""Lloyd's K-means with k-means++ seeding.

Used for Nyström anchors and for the single-reference case of the
unsupervised reference learning.
"""
import numpy as np

from .exceptions import InsufficientData


def squared_distances(X, Y):
    """Pairwise ``||x_i - y_j||^2``, clamped at 0."""
    d2 = (
        np.einsum("ij,ij->i", X, X)[:, None]
        + np.einsum("ij,ij->i", Y, Y)[None, :]
        - 2.0 * X @ Y.T
    )
    return np.maximum(d2, 0.0)


def kmeans_plusplus(X, k, rng):
    """k-means++ seeding. Returns indices of the chosen rows."""
    n = X.shape[0]
    idx = [int(rng.integers(n))]
    closest = squared_distances(X, X[idx]).ravel()
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # every point already coincides with a center
            idx.append(int(rng.integers(n)))
        else:
            idx.append(int(rng.choice(n, p=closest / total)))
        closest = np.minimum(closest, squared_distances(X, X[idx[-1:]]).ravel())
    return np.asarray(idx)


class KMeansResult:
    """Centers, labels and the inertia after every Lloyd iteration."""

    def __init__(self, centers, labels, inertia_history):
        self.centers = centers
        self.labels = labels
        self.inertia_history = inertia_history

    @property
    def inertia(self):
        return self.inertia_history[-1]


def kmeans(X, k, max_iter=100, seed=0):
    """Lloyd's algorithm.

    Parameters
    ----------
    X : ndarray of shape (n, d)
    k : int
    max_iter : int, default=100
    seed : int or numpy Generator

    Returns
    -------
    KMeansResult
        ``inertia_history[0]`` is the inertia of the seeding, then one entry
        per Lloyd iteration. Stops early once labels stop changing.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"X must be 2-D, got shape {X.shape}")
    n = X.shape[0]
    if k < 1 or n < k:
        raise InsufficientData(f"need at least k={k} points, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    centers = X[kmeans_plusplus(X, k, rng)].copy()
    d2 = squared_distances(X, centers)
    labels = np.argmin(d2, axis=1)
    history = [float(d2[np.arange(n), labels].sum())]
    for _ in range(max_iter):
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, X)
        new_centers = centers.copy()
        filled = counts > 0
        new_centers[filled] = sums[filled] / counts[filled, None]
        # empty cluster: move it onto the point that is worst served
        point_cost = d2[np.arange(n), labels]
        for j in np.flatnonzero(~filled):
            far = int(np.argmax(point_cost))
            new_centers[j] = X[far]
            point_cost[far] = -1.0
        centers = new_centers
        d2 = squared_distances(X, centers)
        new_labels = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(n), new_labels].sum()))
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return KMeansResult(centers, labels, history)
