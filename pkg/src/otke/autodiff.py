"""Reverse-mode gradients of the supervised training loss.

The graph is fixed: Nyström map -> similarity to the references -> ``L``
unrolled Sinkhorn updates -> optional positional weighting -> pooling ->
linear classifier -> cross-entropy + (lam/2)|W|^2. :func:`forward_loss`
records every intermediate the backward pass needs on a :class:`Tape`, and
:func:`backward` walks the graph in reverse by hand. The derivative is that
of the ``L``-step map, not of the Sinkhorn fixed point.
"""
from dataclasses import dataclass

import numpy as np

from .classifier import LinearClassifier, cross_entropy
from .embedding import ReferenceBank, position_matrix
from .exceptions import DimensionMismatch, NonFiniteError
from .kernels import KernelSpec, NystromMap, inverse_sqrt_psd, kernel_eval
from .sinkhorn import _logsumexp, _safe_log, masked_uniform

__all__ = [
    "Tape",
    "GradientBundle",
    "forward_loss",
    "backward",
    "grad_check",
    "default_unroll_mode",
    "toy_problem",
]

BLOCKS = ("refs", "anchors", "W", "bias")


@dataclass
class GradientBundle:
    """Gradients of the loss, one array per parameter block."""

    refs: np.ndarray
    anchors: np.ndarray
    W: np.ndarray
    bias: np.ndarray

    def __getitem__(self, name):
        return getattr(self, name)


class Tape:
    """Saved intermediates of one forward pass."""

    def __init__(self, **values):
        self.__dict__.update(values)


def default_unroll_mode(epsilon):
    """Log-domain below ``epsilon = 0.1``, plain arithmetic otherwise."""
    return "log" if epsilon < 0.1 else "standard"


def _softmax(x, axis):
    return np.exp(x - np.expand_dims(_logsumexp(x, axis), axis))


# --- Sinkhorn, unrolled -----------------------------------------------------


def _sinkhorn_standard_fwd(K, a, b, epsilon, n_iter):
    E = np.exp(K / epsilon)
    v = np.ones(K.shape[:-2] + (K.shape[-1],))
    us, vs, ss, ts = [], [v], [], []
    for _ in range(n_iter):
        s = np.einsum("...ij,...j->...i", E, v)
        u = a / s
        t = np.einsum("...ij,...i->...j", E, u)
        v = b / t
        us.append(u)
        vs.append(v)
        ss.append(s)
        ts.append(t)
    P = u[..., :, None] * E * v[..., None, :]
    return P, dict(E=E, us=us, vs=vs, ss=ss, ts=ts)


def _sinkhorn_standard_bwd(dP, saved, epsilon):
    E, us, vs, ss, ts = saved["E"], saved["us"], saved["vs"], saved["ss"], saved["ts"]
    u, v = us[-1], vs[-1]
    dE = dP * u[..., :, None] * v[..., None, :]
    dPE = dP * E
    du = np.einsum("...ij,...j->...i", dPE, v)
    dv = np.einsum("...ij,...i->...j", dPE, u)
    for l in range(len(us) - 1, -1, -1):
        # v_l = b / t_l,  t_l = E^T u_l
        dt = -dv * vs[l + 1] / ts[l]
        dE += us[l][..., :, None] * dt[..., None, :]
        du = du + np.einsum("...ij,...j->...i", E, dt)
        # u_l = a / s_l,  s_l = E v_{l-1}
        ds = -du * us[l] / ss[l]
        dE += ds[..., :, None] * vs[l][..., None, :]
        dv = np.einsum("...ij,...i->...j", E, ds)
        du = 0.0
    return dE * E / epsilon


def _sinkhorn_log_fwd(K, a, b, epsilon, n_iter):
    log_a, log_b = _safe_log(a), _safe_log(b)
    g = np.zeros(K.shape[:-2] + (K.shape[-1],))
    fs, gs = [], [g]
    for _ in range(n_iter):
        f = epsilon * (log_a - _logsumexp((K + g[..., None, :]) / epsilon, axis=-1))
        g = epsilon * (log_b - _logsumexp((K + f[..., :, None]) / epsilon, axis=-2))
        fs.append(f)
        gs.append(g)
    P = np.exp((K + f[..., :, None] + g[..., None, :]) / epsilon)
    return P, dict(K=K, fs=fs, gs=gs)


def _sinkhorn_log_bwd(dP, P, saved, epsilon):
    K, fs, gs = saved["K"], saved["fs"], saved["gs"]
    dZ = dP * P / epsilon
    dK = dZ.copy()
    df = dZ.sum(axis=-1)
    dg = dZ.sum(axis=-2)
    for l in range(len(fs) - 1, -1, -1):
        # g_l = eps log b - eps LSE_i((K + f_l) / eps): weights are column softmaxes
        col = _softmax((K + fs[l][..., :, None]) / epsilon, axis=-2)
        dK -= col * dg[..., None, :]
        df = df - np.einsum("...ij,...j->...i", col, dg)
        # f_l = eps log a - eps LSE_j((K + g_{l-1}) / eps): row softmaxes
        row = _softmax((K + gs[l][..., None, :]) / epsilon, axis=-1)
        dK -= row * df[..., :, None]
        dg = -np.einsum("...ij,...i->...j", row, df)
        df = 0.0
    return dK


# --- Nyström map -------------------------------------------------------------


def _inv_sqrt_divided_differences(lam, ridge):
    lam_c = np.maximum(lam, ridge) if ridge > 0 else lam
    f = lam_c ** -0.5
    fprime = np.where(lam > ridge, -0.5 * lam_c ** -1.5, 0.0) if ridge > 0 else -0.5 * lam ** -1.5
    diff = lam[:, None] - lam[None, :]
    close = np.abs(diff) <= 1e-10 * max(1.0, np.max(np.abs(lam)))
    with np.errstate(divide="ignore", invalid="ignore"):
        gamma = (f[:, None] - f[None, :]) / diff
    avg = 0.5 * (fprime[:, None] + fprime[None, :])
    return np.where(close, avg, gamma)


def _kernel_grad_wrt_second(spec, dG, G, X, w):
    """Gradient w.r.t. ``w`` of ``<dG, kappa(X, w)>``; X (N, d), w (k, d)."""
    if spec.kind == "linear":
        return dG.T @ X
    M = dG * G
    return (M.T @ X - M.sum(axis=0)[:, None] * w) / spec.sigma ** 2


# --- forward / backward -------------------------------------------------------


def forward_loss(batch, nystrom, bank, classifier, labels=None, mode=None):
    """Loss of the full graph on a padded batch, plus the tape for :func:`backward`.

    Parameters
    ----------
    batch : PaddedBatch
        Raw features (before the Nyström map).
    nystrom : NystromMap
    bank : ReferenceBank
    classifier : LinearClassifier
    labels : ndarray, optional
        Defaults to ``batch.labels``. Int labels give softmax cross-entropy;
        a 0/1 matrix gives binary cross-entropy.
    mode : {"log", "standard"}, optional
        Arithmetic of the unrolled Sinkhorn; see :func:`default_unroll_mode`.

    Returns
    -------
    loss : float
        ``mean cross-entropy + (lam/2) |W|^2``.
    tape : Tape
    """
    y = np.asarray(batch.labels if labels is None else labels)
    X = np.asarray(batch.features, dtype=np.float64)
    lengths = np.asarray(batch.lengths)
    B, n_max, d = X.shape
    if d != nystrom.n_features:
        raise DimensionMismatch(f"features have width {d}, anchors have {nystrom.n_features}")
    if nystrom.n_components != bank.k:
        raise DimensionMismatch(f"Nystrom gives {nystrom.n_components} dims, refs have {bank.k}")
    mode = default_unroll_mode(bank.epsilon) if mode is None else mode
    if mode == "log_domain":
        mode = "log"
    q, p = bank.q, bank.p
    mask = np.arange(n_max)[None, :] < lengths[:, None]

    w = nystrom.anchors
    Kww = kernel_eval(nystrom.spec, w, w)
    Wh, lam, U = inverse_sqrt_psd(Kww, nystrom.ridge)
    Xf = X.reshape(B * n_max, d)
    G = kernel_eval(nystrom.spec, Xf, w)
    psi = np.where(mask[..., None], (G @ Wh).reshape(B, n_max, -1), 0.0)

    K = np.einsum("bik,jpk->bjip", psi, bank.refs)
    a = masked_uniform(lengths, n_max)[:, None, :]
    b = np.full(p, 1.0 / p)
    if bank.pooling == "ot":
        K = np.where(mask[:, None, :, None], K, 0.0)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            if mode == "log":
                P, saved = _sinkhorn_log_fwd(K, a, b, bank.epsilon, bank.n_iter)
            else:
                P, saved = _sinkhorn_standard_fwd(K, a, b, bank.epsilon, bank.n_iter)
    else:
        scores = np.where(mask[:, None, :, None], K / bank.epsilon, -np.inf)
        Q = _softmax(scores, axis=-2)
        P, saved = Q / p, dict(Q=Q)
    if not np.all(np.isfinite(P)):
        raise NonFiniteError(f"transport plans are not finite (epsilon={bank.epsilon}, mode={mode})")

    S = None
    Pt = P
    if bank.sigma_pos is not None:
        S = np.zeros((B, n_max, p))
        for i, n in enumerate(lengths):
            S[i, :n] = position_matrix(int(n), p, bank.sigma_pos)
        Pt = P * S[:, None]
    scale = np.sqrt(p / q)
    emb = scale * np.einsum("bjip,bik->bjpk", Pt, psi)
    E = emb.reshape(B, -1)
    logits = classifier.decision_function(E)
    ce, dlogits = cross_entropy(logits, y)
    loss = ce + 0.5 * classifier.lam * np.sum(classifier.W ** 2)
    if not np.isfinite(loss):
        raise NonFiniteError("loss is not finite")
    tape = Tape(
        X=Xf, mask=mask, nystrom=nystrom, bank=bank, classifier=classifier, mode=mode,
        Kww=Kww, Wh=Wh, lam=lam, U=U, G=G, psi=psi, P=P, saved=saved, S=S, Pt=Pt,
        scale=scale, embedding=E, logits=logits, dlogits=dlogits, loss=loss,
    )
    return float(loss), tape


def backward(tape):
    """Exact gradients of the recorded graph.

    Returns
    -------
    GradientBundle
        With respect to the references, the Nyström anchors and the
        classifier weights and bias.
    """
    nys, bank, clf = tape.nystrom, tape.bank, tape.classifier
    B, n_max, k = tape.psi.shape
    q, p = bank.q, bank.p

    dlogits = tape.dlogits
    dW = dlogits.T @ tape.embedding + clf.lam * clf.W
    dbias = dlogits.sum(axis=0)
    demb = (dlogits @ clf.W).reshape(B, q, p, k)

    dPt = tape.scale * np.einsum("bjpk,bik->bjip", demb, tape.psi)
    dpsi = tape.scale * np.einsum("bjip,bjpk->bik", tape.Pt, demb)
    dP = dPt * tape.S[:, None] if tape.S is not None else dPt

    if bank.pooling == "ot":
        if tape.mode == "log":
            dK = _sinkhorn_log_bwd(dP, tape.P, tape.saved, bank.epsilon)
        else:
            dK = _sinkhorn_standard_bwd(dP, tape.saved, bank.epsilon)
        dK = np.where(tape.mask[:, None, :, None], dK, 0.0)
    else:
        Q = tape.saved["Q"]
        dQ = dP / p
        dK = Q * (dQ - np.sum(Q * dQ, axis=-2, keepdims=True)) / bank.epsilon

    dpsi += np.einsum("bjip,jpk->bik", dK, bank.refs)
    drefs = np.einsum("bjip,bik->jpk", dK, tape.psi)
    dpsi = np.where(tape.mask[..., None], dpsi, 0.0).reshape(B * n_max, k)

    # psi = G Wh with Wh = f(Kww) symmetric
    dG = dpsi @ tape.Wh
    dWh = tape.G.T @ dpsi
    U = tape.U
    gamma = _inv_sqrt_divided_differences(tape.lam, nys.ridge)
    dKww = U @ (gamma * (U.T @ dWh @ U)) @ U.T
    w = nys.anchors
    danchors = _kernel_grad_wrt_second(nys.spec, dG, tape.G, tape.X, w)
    # Kww = kappa(w, w): w enters through both arguments
    danchors += _kernel_grad_wrt_second(nys.spec, dKww + dKww.T, tape.Kww, w, w)
    return GradientBundle(drefs, danchors, dW, dbias)


# --- finite-difference check --------------------------------------------------


def _replace_block(nystrom, bank, classifier, name, value):
    if name == "refs":
        bank = bank.replace(refs=value)
    elif name == "anchors":
        nystrom = NystromMap(value, nystrom.spec, nystrom.ridge)
    elif name == "W":
        classifier = LinearClassifier(value, classifier.bias, classifier.lam)
    elif name == "bias":
        classifier = LinearClassifier(classifier.W, value, classifier.lam)
    else:
        raise KeyError(name)
    return nystrom, bank, classifier


def _block_value(nystrom, bank, classifier, name):
    return {
        "refs": bank.refs,
        "anchors": nystrom.anchors,
        "W": classifier.W,
        "bias": classifier.bias,
    }[name]


def grad_check(batch, nystrom, bank, classifier, labels=None, h=1e-5, samples=50,
               seed=0, mode=None, blocks=BLOCKS):
    """Compare :func:`backward` with central differences.

    For each parameter block, ``samples`` coordinates are drawn without
    replacement (every coordinate when the block is smaller) and
    ``(f(theta + h e) - f(theta - h e)) / 2h`` is compared with the analytic
    gradient. The relative error uses ``max(|analytic|, |numeric|, 1e-8)``
    as denominator.

    Returns
    -------
    max_error : float
    per_block : dict
        ``{block: (max_error, n_coordinates)}``.
    """
    if not 1e-6 <= h <= 1e-4:
        raise ValueError(f"h must lie in [1e-6, 1e-4], got {h}")
    _, tape = forward_loss(batch, nystrom, bank, classifier, labels, mode)
    grads = backward(tape)
    rng = np.random.default_rng(seed)
    per_block = {}
    for name in blocks:
        theta = _block_value(nystrom, bank, classifier, name)
        size = theta.size
        coords = rng.choice(size, size=min(samples, size), replace=False)
        worst = 0.0
        for c in np.sort(coords):
            vals = []
            for sign in (1.0, -1.0):
                pert = theta.copy()
                pert.flat[c] += sign * h
                parts = _replace_block(nystrom, bank, classifier, name, pert)
                vals.append(forward_loss(batch, *parts, labels=labels, mode=mode)[0])
            numeric = (vals[0] - vals[1]) / (2.0 * h)
            analytic = grads[name].flat[c]
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, err)
        per_block[name] = (worst, len(coords))
    return max(v[0] for v in per_block.values()), per_block


def toy_problem(seed=42, B=2, n=3, d=2, k=2, p=2, q=1, n_classes=2, epsilon=1.0,
                n_iter=5, lam=0.1, sigma=1.0, sigma_pos=None, kernel="gaussian"):
    """Small random instance of the full graph.

    Returns ``(batch, nystrom, bank, classifier)``; all sets have length
    ``n`` except the last, which has ``n - 1`` rows when ``B > 1`` so that
    padding is exercised.
    """
    from .data import pad_sets

    rng = np.random.default_rng(seed)
    sets = [rng.normal(size=(n, d)) for _ in range(B)]
    if B > 1 and n > 1:
        sets[-1] = sets[-1][:-1]
    labels = rng.integers(n_classes, size=B)
    batch = pad_sets(sets, labels)
    spec = KernelSpec(kernel, sigma)
    nystrom = NystromMap(rng.normal(size=(k, d)), spec, ridge=1e-6)
    bank = ReferenceBank(rng.normal(size=(q, p, k)), epsilon=epsilon, n_iter=n_iter,
                         sigma_pos=sigma_pos)
    classifier = LinearClassifier(rng.normal(size=(n_classes, q * p * k)),
                                  rng.normal(size=n_classes), lam)
    return batch, nystrom, bank, classifier
