"""Exact small-scale kernels and Wasserstein quantities.

``K_OT`` weights the match kernel with the direct plan between two sets;
``K_z`` routes both sets through a reference and glues the two plans. The
distances use the metric induced by the kernel,
``d^2(x, y) = kappa(x, x) + kappa(y, y) - 2 kappa(x, y)``, and ``epsilon=0``
switches to exact enumeration (equal sizes up to 8).
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .embedding import column_softmax, position_matrix
from .exceptions import DimensionMismatch, TooLarge
from .kernels import KernelSpec, kernel_eval
from .sinkhorn import count_solves, exact_ot_bruteforce, sinkhorn

__all__ = [
    "GroundMetric",
    "GramResult",
    "k_ot",
    "k_z",
    "w2",
    "w2_entropic",
    "w2_surrogate",
    "verify_bounds",
    "random_bound_trials",
    "gram",
    "write_gram_csv",
    "read_gram_csv",
    "GRAM_KINDS",
]

GRAM_KINDS = ("k_ot", "k_z", "mean_pool", "flatten")
MAX_GRAM = 2000
SLACK = 1e-9


@dataclass(frozen=True)
class GroundMetric:
    """Squared distance induced by a kernel."""

    spec: KernelSpec = field(default_factory=KernelSpec)

    def d2(self, X, Y):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
        out = self.spec.diag(X)[:, None] + self.spec.diag(Y)[None, :] - 2.0 * kernel_eval(self.spec, X, Y)
        return np.maximum(out, 0.0)


def _as_set(x):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[0] == 0:
        raise DimensionMismatch("sets must be non-empty")
    return x


def k_ot(x, y, spec, epsilon, n_iter=500):
    """``sum_ij P(x, y)_ij kappa(x_i, y_j)`` with the entropic plan for cost ``-kappa``."""
    x, y = _as_set(x), _as_set(y)
    kxy = kernel_eval(spec, x, y)
    P = sinkhorn(kxy, epsilon, n_iter).plan
    return float(np.sum(P * kxy))


def reference_plans(x, bank, spec):
    """Plans between ``x`` and each reference for the similarity ``kappa``.

    Positional weights and dot-product pooling follow the bank settings.
    Returns an array of shape (q, n, p).
    """
    x = _as_set(x)
    if x.shape[1] != bank.k:
        raise DimensionMismatch(f"set width {x.shape[1]} differs from reference width {bank.k}")
    K = np.stack([kernel_eval(spec, x, z) for z in bank.refs])
    if bank.pooling == "ot":
        P = np.stack([sinkhorn(Kj, bank.epsilon, bank.n_iter, mode=bank.mode).plan for Kj in K])
    else:
        P = column_softmax(K / bank.epsilon) / bank.p
    if bank.sigma_pos is not None:
        P = P * position_matrix(x.shape[0], bank.p, bank.sigma_pos)
    return P


def _k_z_from_plans(Px, Py, kxy, p):
    # mean over references of sum_ii' p (P_x P_y^T)_ii' kappa(x_i, y_i')
    glued = p * np.einsum("jip,jlp->jil", Px, Py)
    return float(np.mean(np.sum(glued * kxy[None], axis=(1, 2))))


def k_z(x, y, bank, spec):
    """Reference-glued kernel ``sum_ii' p (P(x,z) P(y,z)^T)_ii' kappa(x_i, y_i')``.

    With several references the values are averaged, matching the
    ``1/sqrt(q)`` scaling of the stacked embedding.
    """
    x, y = _as_set(x), _as_set(y)
    return _k_z_from_plans(
        reference_plans(x, bank, spec), reference_plans(y, bank, spec), kernel_eval(spec, x, y), bank.p
    )


def _plan_for_cost(C, epsilon, n_iter):
    if epsilon == 0:
        return exact_ot_bruteforce(C)[0]
    return sinkhorn(-C, epsilon, n_iter).plan


def _ordered(x, y):
    # solve every unordered pair the same way so the result is symmetric
    kx = (x.shape[0], x.tobytes())
    ky = (y.shape[0], y.tobytes())
    return (x, y, False) if kx <= ky else (y, x, True)


def w2_plan(x, y, metric, epsilon, n_iter=500):
    """Plan between ``x`` and ``y`` for the cost ``d^2``; ``epsilon=0`` is exact."""
    x, y = _as_set(x), _as_set(y)
    first, second, swapped = _ordered(x, y)
    P = _plan_for_cost(metric.d2(first, second), epsilon, n_iter)
    return P.T if swapped else P


def w2_entropic(x, y, metric, epsilon, n_iter=500):
    """``<P, d^2>^{1/2}`` with ``P`` the (entropic) plan for cost ``d^2``."""
    x, y = _as_set(x), _as_set(y)
    P = w2_plan(x, y, metric, epsilon, n_iter)
    return float(np.sqrt(max(np.sum(P * metric.d2(x, y)), 0.0)))


def w2(x, y, metric):
    """Exact 2-Wasserstein distance between equal-size uniform sets."""
    return w2_entropic(x, y, metric, 0.0)


def _refs(z):
    z = np.asarray(z, dtype=np.float64)
    return z[None] if z.ndim == 2 else z


def w2_surrogate(x, y, z, metric, epsilon=0.0, n_iter=500):
    """Distance of the glued plan ``p P(x,z) P(y,z)^T`` under ``d^2(x, y)``.

    ``z`` may hold several references, shape (q, p, d); the squared
    surrogates are then averaged over references.
    """
    x, y = _as_set(x), _as_set(y)
    refs = _refs(z)
    d2 = metric.d2(x, y)
    total = 0.0
    for zj in refs:
        Px = w2_plan(x, zj, metric, epsilon, n_iter)
        Py = w2_plan(y, zj, metric, epsilon, n_iter)
        total += np.sum(zj.shape[0] * (Px @ Py.T) * d2)
    return float(np.sqrt(max(total / refs.shape[0], 0.0)))


@dataclass
class BoundReport:
    """Worst slack (rhs - lhs, negative means violated) of each bound."""

    surrogate_slack: float
    single_ref_slack: float
    multi_ref_slack: float
    violations: int
    checks: int
    glue_error: float

    @property
    def passed(self):
        return self.violations == 0


def verify_bounds(samples, refs, metric, epsilon=0.0, n_iter=500):
    """Check the W2 vs surrogate bounds on one instance.

    * pairwise: ``|W2(x, x') - W2^z(x, x')| <= 2 min(W2(x, z), W2(x', z))``
      for every pair and every reference;
    * per reference: ``E^2 <= (4/m) sum_i W2^2(x^i, z)`` with
      ``E^2 = (1/m^2) sum_ij (W2 - W2^z)^2``;
    * all references: ``E^2 <= (4/(m q)) sum_ij W2^2(x^i, z^j)`` for the
      averaged multi-reference surrogate.

    A check fails when it is violated by more than ``1e-9``.
    ``glue_error`` is the largest ``|P_z - P|_F`` over pairs, for information.
    """
    xs = [_as_set(x) for x in samples]
    refs = _refs(refs)
    m, q = len(xs), refs.shape[0]
    W = np.array([[w2_entropic(a, b, metric, epsilon, n_iter) for b in xs] for a in xs])
    Wz = np.array(
        [[[w2_surrogate(a, b, zj, metric, epsilon, n_iter) for b in xs] for a in xs] for zj in refs]
    )
    Wxz = np.array([[w2_entropic(a, zj, metric, epsilon, n_iter) for zj in refs] for a in xs])
    Wmulti = np.sqrt(np.mean(Wz ** 2, axis=0))
    violations = checks = 0
    surrogate = np.inf
    for j in range(q):
        bound = 2.0 * np.minimum(Wxz[:, j][:, None], Wxz[:, j][None, :])
        slack = bound - np.abs(W - Wz[j])
        surrogate = min(surrogate, float(slack.min()))
        violations += int(np.sum(slack < -SLACK))
        checks += slack.size
    single = np.inf
    for j in range(q):
        err2 = np.mean((W - Wz[j]) ** 2)
        slack = 4.0 / m * np.sum(Wxz[:, j] ** 2) - err2
        single = min(single, float(slack))
        violations += int(slack < -SLACK)
        checks += 1
    err2 = np.mean((W - Wmulti) ** 2)
    multi = float(4.0 / (m * q) * np.sum(Wxz ** 2) - err2)
    violations += int(multi < -SLACK)
    checks += 1
    glue = 0.0
    for j, zj in enumerate(refs):
        plans = [w2_plan(a, zj, metric, epsilon, n_iter) for a in xs]
        for a in range(m):
            for b in range(m):
                if xs[a].shape[0] != xs[b].shape[0]:
                    continue
                Pz = zj.shape[0] * plans[a] @ plans[b].T
                P = w2_plan(xs[a], xs[b], metric, epsilon, n_iter)
                glue = max(glue, float(np.linalg.norm(Pz - P)))
    return BoundReport(surrogate, single, multi, violations, checks, glue)


def random_bound_trials(trials, m=4, q=2, n=5, d=3, metric=None, seed=0, epsilon=0.0):
    """Run :func:`verify_bounds` on random Gaussian instances.

    Every set and reference has ``n`` points (``n <= 8`` for the exact path).
    Returns the list of reports.
    """
    metric = metric or GroundMetric(KernelSpec("gaussian", 1.0))
    if epsilon == 0 and n > 8:
        raise TooLarge("exact enumeration supports at most 8 points per set")
    rng = np.random.default_rng(seed)
    reports = []
    for _ in range(trials):
        samples = [rng.normal(size=(n, d)) for _ in range(m)]
        refs = rng.normal(size=(q, n, d))
        reports.append(verify_bounds(samples, refs, metric, epsilon))
    return reports


@dataclass
class GramResult:
    values: np.ndarray
    kind: str
    epsilon: float
    n_solves: int
    n_pair_solves: int


def gram(sets, kind, spec=None, epsilon=0.5, bank=None, n_iter=500, threads=1):
    """Pairwise kernel matrix of a list of sets.

    Parameters
    ----------
    sets : list of ndarray
    kind : {"k_ot", "k_z", "mean_pool", "flatten"}
        ``k_z`` needs ``bank`` and computes one plan per set; ``k_ot`` one
        plan per pair of sets (the diagonal needs one more per set).
        ``flatten`` compares elements with the same index and requires
        equal lengths.
    spec : KernelSpec, optional
    threads : int
        Worker threads; results do not depend on it.

    Returns
    -------
    GramResult
    """
    if kind not in GRAM_KINDS:
        raise ValueError(f"kind must be one of {GRAM_KINDS}, got {kind!r}")
    xs = [_as_set(x) for x in sets]
    m = len(xs)
    if m > MAX_GRAM:
        raise TooLarge(f"Gram matrices are limited to {MAX_GRAM} sets, got {m}")
    spec = spec or KernelSpec()
    G = np.zeros((m, m))
    diagonal = [(i, i) for i in range(m)]
    off_diagonal = [(i, j) for i in range(m) for j in range(i + 1, m)]
    with count_solves() as counter:
        if kind == "k_z":
            if bank is None:
                raise ValueError("k_z requires a reference bank")
            epsilon = bank.epsilon
            with ThreadPoolExecutor(max_workers=threads) as pool:
                plans = list(pool.map(lambda x: reference_plans(x, bank, spec), xs))

            def fn(i, j):
                return _k_z_from_plans(plans[i], plans[j], kernel_eval(spec, xs[i], xs[j]), bank.p)

        elif kind == "k_ot":

            def fn(i, j):
                return k_ot(xs[i], xs[j], spec, epsilon, n_iter)

        elif kind == "mean_pool":

            def fn(i, j):
                return float(np.mean(kernel_eval(spec, xs[i], xs[j])))

        else:
            if len({x.shape[0] for x in xs}) > 1:
                raise DimensionMismatch("flatten kernel needs sets of equal length")

            def fn(i, j):
                return float(np.trace(kernel_eval(spec, xs[i], xs[j])))

        with ThreadPoolExecutor(max_workers=threads) as pool:
            diag_vals = list(pool.map(lambda ij: fn(*ij), diagonal))
            with count_solves() as pair_counter:
                off_vals = list(pool.map(lambda ij: fn(*ij), off_diagonal))
    for (i, j), v in zip(diagonal + off_diagonal, diag_vals + off_vals):
        G[i, j] = G[j, i] = v
    return GramResult(G, kind, epsilon, counter.count, pair_counter.count)


def write_gram_csv(path, result):
    m = result.values.shape[0]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# kind={result.kind} m={m} epsilon={result.epsilon!r}\n")
        for row in result.values:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def read_gram_csv(path):
    """Return ``(matrix, header_dict)``."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise ValueError("missing Gram header line")
        meta = dict(tok.split("=", 1) for tok in header[1:].split())
        rows = [[float(v) for v in line.split(",")] for line in fh if line.strip()]
    return np.array(rows), meta
