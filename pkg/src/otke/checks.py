"""Self-check suites run by ``otke check``.

Every suite returns a :class:`CheckResult` whose ``metrics`` are printed as
``key=value`` pairs.
"""
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import grad_check, toy_problem
from .embedding import ReferenceBank, embed_set
from .exact import GroundMetric, gram, k_z, random_bound_trials
from .kernels import KernelSpec
from .sinkhorn import sinkhorn

__all__ = ["CheckResult", "SUITES", "run_suite"]


@dataclass
class CheckResult:
    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)

    def line(self):
        parts = [f"suite={self.name}", f"status={'PASS' if self.passed else 'FAIL'}"]
        parts += [f"{k}={_fmt(v)}" for k, v in self.metrics.items()]
        return " ".join(parts)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.3e}"
    return str(v)


def check_sinkhorn(trials=200, seed=0):
    """Marginal residuals and agreement of the two arithmetic modes."""
    rng = np.random.default_rng(seed)
    residual = agreement = 0.0
    for _ in range(trials):
        n, p = int(rng.integers(1, 51)), int(rng.integers(1, 21))
        eps = float(rng.choice([0.1, 0.5, 1.0]))
        K = rng.uniform(size=(n, p))  # similarities in [0, 1]
        log_plan = sinkhorn(K, eps, 100, mode="log")
        std_plan = sinkhorn(K, eps, 100, mode="standard")
        residual = max(residual, *log_plan.marginal_residuals(), *std_plan.marginal_residuals())
        agreement = max(agreement, float(np.max(np.abs(log_plan.plan - std_plan.plan))))
    return CheckResult("sinkhorn", residual <= 1e-6 and agreement <= 1e-10,
                       {"trials": trials, "max_residual": residual, "mode_gap": agreement})


def check_kernel_identity(trials=100, seed=0):
    """Embedding inner products equal the reference-glued kernel."""
    rng = np.random.default_rng(seed)
    spec = KernelSpec("linear")
    worst = 0.0
    for _ in range(trials):
        k, p = int(rng.integers(2, 8)), int(rng.integers(1, 8))
        x = rng.normal(size=(int(rng.integers(1, 15)), k))
        y = rng.normal(size=(int(rng.integers(1, 15)), k))
        bank = ReferenceBank(rng.normal(size=(p, k)), epsilon=float(rng.choice([0.1, 0.5, 1.0])))
        lhs = float(np.sum(embed_set(x, bank) * embed_set(y, bank)))
        rhs = k_z(x, y, bank, spec)
        worst = max(worst, abs(lhs - rhs) / max(abs(rhs), 1e-300))
    return CheckResult("kernel_identity", worst <= 1e-10, {"trials": trials, "max_rel_err": worst})


def check_surrogate_bound(trials=100, seed=0):
    """Pairwise surrogate bound with exact plans."""
    rng = np.random.default_rng(seed)
    metric = GroundMetric(KernelSpec("gaussian", 1.0))
    violations = 0
    slack = np.inf
    for t in range(trials):
        n = int(rng.integers(2, 7))
        report = random_bound_trials(1, m=2, q=1, n=n, d=3, metric=metric, seed=[seed, t])[0]
        violations += int(report.surrogate_slack < -1e-9)
        slack = min(slack, report.surrogate_slack)
    return CheckResult("lemma1", violations == 0,
                       {"trials": trials, "violations": violations, "min_slack": float(slack)})


def check_bounds(trials=20, seed=0):
    """Aggregate single- and multi-reference bounds, m=4, q in {1, 2}."""
    violations = 0
    slack = np.inf
    metric = GroundMetric(KernelSpec("gaussian", 1.0))
    for q in (1, 2):
        for report in random_bound_trials(trials, m=4, q=q, n=4, d=3, metric=metric, seed=[seed, q]):
            violations += report.violations
            slack = min(slack, report.single_ref_slack, report.multi_ref_slack)
    return CheckResult("bounds", violations == 0,
                       {"trials": 2 * trials, "violations": violations, "min_slack": float(slack)})


def check_gradcheck(seed=42):
    """Finite differences on the toy graph and on an enlarged graph."""
    small = toy_problem(seed=seed, n_iter=10)
    err_small, _ = grad_check(*small, h=1e-5, samples=50, seed=seed)
    large = toy_problem(seed=seed, B=3, n=5, d=8, k=8, p=8, n_iter=10)
    err_large, blocks = grad_check(*large, h=1e-5, samples=50, seed=seed)
    worst = max(err_small, err_large)
    coords = min(n for _, n in blocks.values() if n >= 50) if blocks else 0
    return CheckResult("gradcheck", worst <= 1e-4,
                       {"max_rel_err": worst, "min_sampled_coords": coords})


def check_psd(trials=50, seed=0):
    """K_z Gram of random sets is PSD; solve counts for K_z and K_OT."""
    rng = np.random.default_rng(seed)
    m = trials
    sets = [rng.normal(size=(int(rng.integers(2, 12)), 3)) for _ in range(m)]
    spec = KernelSpec("gaussian", 1.0)
    bank = ReferenceBank(rng.normal(size=(5, 3)), epsilon=0.5, n_iter=100)
    result = gram(sets, "k_z", spec, bank=bank)
    G = result.values
    min_eig = float(np.linalg.eigvalsh(G).min())
    tol = -1e-8 * np.trace(G) / m
    small = sets[:10]
    ot = gram(small, "k_ot", spec, epsilon=0.5)
    pairs_ok = ot.n_pair_solves == len(small) * (len(small) - 1) // 2
    ok = min_eig >= tol and result.n_solves == m and pairs_ok
    return CheckResult("psd", ok, {"m": m, "min_eig": min_eig, "k_z_solves": result.n_solves,
                                   "k_ot_pair_solves": ot.n_pair_solves})


def check_multiref(trials=50, seed=0):
    """Norm scaling across references, permutation invariance, PE limit."""
    rng = np.random.default_rng(seed)
    scale = perm = pe = 0.0
    for _ in range(trials):
        n, k, p, q = (int(rng.integers(2, 12)), int(rng.integers(2, 6)),
                      int(rng.integers(1, 6)), int(rng.integers(2, 4)))
        x = rng.normal(size=(n, k))
        refs = rng.normal(size=(q, p, k))
        multi = embed_set(x, ReferenceBank(refs))
        single = [embed_set(x, ReferenceBank(refs[j])) for j in range(q)]
        lhs = np.sum(multi ** 2)
        rhs = np.mean([np.sum(s ** 2) for s in single])
        scale = max(scale, abs(lhs - rhs) / max(rhs, 1e-300))
        bank = ReferenceBank(refs[0])
        perm = max(perm, float(np.max(np.abs(embed_set(x[rng.permutation(n)], bank)
                                             - embed_set(x, bank)))))
        pe = max(pe, float(np.max(np.abs(embed_set(x, bank.replace(sigma_pos=1e6))
                                         - embed_set(x, bank)))))
    ok = scale <= 1e-12 and perm <= 1e-12 and pe <= 1e-8
    return CheckResult("multiref", ok, {"trials": trials, "scale_err": scale, "perm_err": perm,
                                        "pe_err": pe})


SUITES = {
    "sinkhorn": (check_sinkhorn, 200),
    "kernel_identity": (check_kernel_identity, 100),
    "lemma1": (check_surrogate_bound, 100),
    "bounds": (check_bounds, 20),
    "gradcheck": (check_gradcheck, None),
    "psd": (check_psd, 50),
    "multiref": (check_multiref, 50),
}


def run_suite(name, trials=None, seed=None):
    """Run one suite; ``None`` arguments use the suite defaults."""
    fn, default = SUITES[name]
    kwargs = {} if seed is None else {"seed": seed}
    if default is not None:
        kwargs["trials"] = default if trials is None else trials
    start = time.perf_counter()
    result = fn(**kwargs)
    result.metrics["seconds"] = round(time.perf_counter() - start, 3)
    return result
