"""Entropic optimal transport between a set and a reference.

The plan solves ``min_P <C, P> - eps * H(P)`` over couplings of ``a`` and
``b`` with the cost ``C = -K``, where ``K`` is a similarity matrix. Both
solvers run a fixed number of alternating scaling updates starting from
``v = 1``; there is no stopping rule, so the computation graph is the same
for every input (which the unrolled backward pass relies on).
"""
import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionMismatch, NonFiniteError, TooLarge

__all__ = [
    "MODES",
    "TransportPlan",
    "sinkhorn",
    "sinkhorn_batched",
    "exact_ot_bruteforce",
    "count_solves",
    "uniform",
    "masked_uniform",
    "entropy",
]

MODES = ("log", "standard")
MAX_BRUTEFORCE = 8

_counter_lock = threading.Lock()
_active_counters = []


class SolveCounter:
    """Number of transport problems solved while the counter is active."""

    def __init__(self):
        self.count = 0

    def __repr__(self):
        return f"SolveCounter(count={self.count})"


@contextmanager
def count_solves():
    """Count Sinkhorn solves inside a ``with`` block.

    A batched call counts one solve per sample.

    >>> with count_solves() as c:
    ...     _ = sinkhorn(np.zeros((2, 2)), 1.0)
    >>> c.count
    1
    """
    counter = SolveCounter()
    with _counter_lock:
        _active_counters.append(counter)
    try:
        yield counter
    finally:
        with _counter_lock:
            _active_counters.remove(counter)


def _record_solves(n):
    if not _active_counters:
        return
    with _counter_lock:
        for counter in _active_counters:
            counter.count += n


@dataclass(frozen=True)
class TransportPlan:
    """Output of :func:`sinkhorn`.

    Attributes
    ----------
    plan : ndarray of shape (n, p)
    epsilon : float
    n_iter : int
        Number of scaling updates that were run.
    a, b : ndarray
        Target row and column marginals.
    """

    plan: np.ndarray
    epsilon: float
    n_iter: int
    a: np.ndarray
    b: np.ndarray

    def marginal_residuals(self):
        """Return ``(|P 1 - a|_inf, |P^T 1 - b|_inf)``."""
        row = np.max(np.abs(self.plan.sum(axis=1) - self.a))
        col = np.max(np.abs(self.plan.sum(axis=0) - self.b))
        return float(row), float(col)


def uniform(n):
    """Uniform weights on ``n`` points."""
    return np.full(n, 1.0 / n)


def _check_mode(mode):
    if mode == "log_domain":
        return "log"
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    return mode


def _check_weights(w, size, name):
    if w is None:
        return uniform(size)
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (size,):
        raise DimensionMismatch(f"{name} has shape {w.shape}, expected ({size},)")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError(f"{name} must lie on the probability simplex")
    return w


def _logsumexp(x, axis):
    # max-shift; all -inf slices return -inf without warnings
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def _safe_log(w):
    with np.errstate(divide="ignore"):
        return np.log(w)


def _scale_standard(K, a, b, epsilon, n_iter):
    # K: (..., n, p); a: (..., n); b: (p,)
    v = np.ones(K.shape[:-2] + (K.shape[-1],))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        E = np.exp(K / epsilon)
        for _ in range(n_iter):
            u = a / np.einsum("...ij,...j->...i", E, v)
            v = b / np.einsum("...ij,...i->...j", E, u)
        P = u[..., :, None] * E * v[..., None, :]
    if not (np.all(np.isfinite(P)) and np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise NonFiniteError(
            f"standard Sinkhorn produced non-finite values at epsilon={epsilon}; "
            "use mode='log'"
        )
    return P


def _scale_log(K, a, b, epsilon, n_iter):
    log_a = _safe_log(a)
    log_b = _safe_log(b)
    g = np.zeros(K.shape[:-2] + (K.shape[-1],))
    for _ in range(n_iter):
        f = epsilon * (log_a - _logsumexp((K + g[..., None, :]) / epsilon, axis=-1))
        g = epsilon * (log_b - _logsumexp((K + f[..., :, None]) / epsilon, axis=-2))
    P = np.exp((K + f[..., :, None] + g[..., None, :]) / epsilon)
    if not np.all(np.isfinite(P)):
        raise NonFiniteError(f"log-domain Sinkhorn produced non-finite values at epsilon={epsilon}")
    return P


def sinkhorn(K, epsilon, n_iter=100, a=None, b=None, mode="log"):
    """Entropic transport plan for the similarity matrix ``K``.

    Parameters
    ----------
    K : array-like of shape (n, p)
        Similarities; the transport cost is ``-K``.
    epsilon : float
        Entropic regularization, > 0.
    n_iter : int, default=100
        Number of alternating updates ``u <- a / (E v)``, ``v <- b / (E^T u)``
        with ``E = exp(K / epsilon)``.
    a, b : array-like, optional
        Marginals; uniform when omitted.
    mode : {"log", "standard"}, default="log"
        ``"log"`` runs the same updates on ``f = eps log u``, ``g = eps log v``
        with log-sum-exp reductions and never underflows.

    Returns
    -------
    TransportPlan
    """
    mode = _check_mode(mode)
    K = np.asarray(K, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] == 0 or K.shape[1] == 0:
        raise DimensionMismatch(f"K must be a non-empty 2-D array, got shape {K.shape}")
    if not np.all(np.isfinite(K)):
        raise ValueError("K has non-finite entries")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if n_iter < 1:
        raise ValueError(f"n_iter must be >= 1, got {n_iter}")
    n, p = K.shape
    a = _check_weights(a, n, "a")
    b = _check_weights(b, p, "b")
    solver = _scale_log if mode == "log" else _scale_standard
    P = solver(K, a, b, float(epsilon), int(n_iter))
    _record_solves(1)
    return TransportPlan(P, float(epsilon), int(n_iter), a, b)


def masked_uniform(lengths, n_max):
    """Row weights ``1/n_i`` on the first ``n_i`` rows, exactly 0 after."""
    lengths = np.asarray(lengths)
    mask = np.arange(n_max)[None, :] < lengths[:, None]
    return np.where(mask, 1.0 / np.maximum(lengths, 1)[:, None], 0.0)


def sinkhorn_batched(K, lengths, epsilon, n_iter=100, mode="log"):
    """Solve ``B`` padded problems at once.

    Parameters
    ----------
    K : array-like of shape (B, n_max, p)
        Rows past ``lengths[i]`` are padding; their values are ignored.
    lengths : array-like of int, shape (B,)

    Returns
    -------
    ndarray of shape (B, n_max, p)
        Plans; padded rows are exactly zero.
    """
    mode = _check_mode(mode)
    K = np.asarray(K, dtype=np.float64)
    if K.ndim != 3:
        raise DimensionMismatch(f"batched K must be 3-D, got shape {K.shape}")
    B, n_max, p = K.shape
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.shape != (B,):
        raise DimensionMismatch(f"lengths has shape {lengths.shape}, expected ({B},)")
    if np.any(lengths < 1) or np.any(lengths > n_max):
        raise DimensionMismatch(f"lengths must lie in [1, {n_max}], got {lengths.tolist()}")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    a = masked_uniform(lengths, n_max)
    # padding may hold anything; neutralize it so exp() stays finite
    K = np.where(a[..., None] > 0, K, 0.0)
    if not np.all(np.isfinite(K)):
        raise ValueError("K has non-finite entries")
    b = uniform(p)
    solver = _scale_log if mode == "log" else _scale_standard
    P = solver(K, a, b, float(epsilon), int(n_iter))
    _record_solves(B)
    return P


def exact_ot_bruteforce(cost):
    """Exact unregularized OT between two uniform measures of equal size.

    With uniform square marginals an optimal plan is a scaled permutation
    matrix, so enumerating the ``n!`` permutations is exact. Ties go to the
    lexicographically smallest permutation.

    Parameters
    ----------
    cost : array-like of shape (n, n), n <= 8

    Returns
    -------
    plan : ndarray of shape (n, n)
    objective : float
        ``<cost, plan>``.
    """
    C = np.asarray(cost, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1] or C.shape[0] == 0:
        raise DimensionMismatch(f"cost must be square and non-empty, got shape {C.shape}")
    n = C.shape[0]
    if n > MAX_BRUTEFORCE:
        raise TooLarge(f"brute-force OT is limited to n <= {MAX_BRUTEFORCE}, got {n}")
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.intp)
    totals = C[np.arange(n), perms].sum(axis=1)
    best = perms[int(np.argmin(totals))]  # argmin keeps the first (lexicographic) minimizer
    plan = np.zeros((n, n))
    plan[np.arange(n), best] = 1.0 / n
    return plan, float(np.sum(C * plan))


def entropy(P):
    """``H(P) = -sum P (log P - 1)`` with ``0 log 0 = 0``."""
    P = np.asarray(P)
    nz = P > 0
    return float(-np.sum(P[nz] * (np.log(P[nz]) - 1.0)))

