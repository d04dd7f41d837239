"""Unsupervised and supervised training of the embedding + linear classifier."""
import itertools
import logging
from dataclasses import asdict, dataclass, fields, replace

import numpy as np
from sklearn.metrics import average_precision_score, roc_auc_score

from .autodiff import backward, forward_loss
from .classifier import LinearClassifier, cross_entropy
from .data import make_batches, pad_sets
from .embedding import ReferenceBank, embed_batch
from .exceptions import EmptyDataset, InsufficientData, NonFiniteError
from .kernels import KernelSpec, NystromMap, embed_features, fit_nystrom
from .references import fit_refs_kmeans, fit_refs_wasserstein

__all__ = [
    "TrainConfig",
    "OTKEModel",
    "Adam",
    "train_unsupervised",
    "train_supervised",
    "train_mean_pooling",
    "select_unsupervised",
    "select_supervised",
    "evaluate",
    "topk_accuracy",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of a training run.

    ``sinkhorn_iters`` is used for the unsupervised embedding and
    ``sup_sinkhorn_iters`` inside supervised training.
    """

    epochs: int = 100
    batch_size: int = 64
    lr: float = 0.01
    lr_halving_patience: int = 5
    lam: float = 1e-4
    epsilon: float = 0.5
    sinkhorn_iters: int = 100
    sup_sinkhorn_iters: int = 10
    sigma_pos: float = None
    p: int = 10
    q: int = 1
    k: int = 32
    kernel: str = "gaussian"
    sigma: float = 1.0
    anchor_method: str = "kmeans"
    ref_method: str = "kmeans"
    pooling: str = "ot"
    ridge: float = 1e-6
    max_fit_features: int = 20000
    wasserstein_outer_iters: int = 10
    seed: int = 0
    schedule: str = "alternating"
    phase_epochs: int = 1
    refit_tol: float = 1e-6
    refit_max_iter: int = 5000

    def __post_init__(self):
        positive = ("batch_size", "lr", "epsilon", "sinkhorn_iters", "sup_sinkhorn_iters",
                    "p", "q", "k", "sigma", "phase_epochs", "refit_max_iter")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("epochs", "lr_halving_patience", "lam", "ridge"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.sigma_pos is not None and not self.sigma_pos > 0:
            raise ValueError(f"sigma_pos must be positive, got {self.sigma_pos}")
        if self.schedule not in ("alternating", "joint"):
            raise ValueError(f"schedule must be 'alternating' or 'joint', got {self.schedule!r}")
        if self.ref_method not in ("kmeans", "wasserstein"):
            raise ValueError(f"ref_method must be 'kmeans' or 'wasserstein', got {self.ref_method!r}")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]

    def to_dict(self):
        return asdict(self)


@dataclass
class OTKEModel:
    """Nyström map, references and linear classifier."""

    nystrom: NystromMap
    bank: ReferenceBank
    classifier: LinearClassifier
    multilabel: bool = False

    def embed(self, sets, batch_size=256):
        out = []
        for start in range(0, len(sets), batch_size):
            batch = pad_sets(sets[start : start + batch_size])
            out.append(embed_batch(batch, self.nystrom, self.bank).reshape(len(batch.lengths), -1))
        return np.concatenate(out, axis=0)

    def decision_function(self, sets):
        return self.classifier.decision_function(self.embed(sets))

    def predict(self, sets):
        return np.argmax(self.decision_function(sets), axis=1)

    def copy(self):
        return OTKEModel(
            NystromMap(self.nystrom.anchors.copy(), self.nystrom.spec, self.nystrom.ridge),
            self.bank.replace(refs=self.bank.refs.copy()),
            self.classifier.copy(),
            self.multilabel,
        )


class Adam:
    """Adam on a dict of arrays; betas (0.9, 0.999), eps 1e-8."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        """Return updated copies of ``params``."""
        self.t += 1
        out = {}
        for name, value in params.items():
            g = grads[name]
            m = self.m.get(name, np.zeros_like(g))
            v = self.v.get(name, np.zeros_like(g))
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            mhat = m / (1 - self.beta1 ** self.t)
            vhat = v / (1 - self.beta2 ** self.t)
            out[name] = value - self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return out


def topk_accuracy(scores, y, k):
    """Fraction of rows whose true label is among the ``k`` largest scores."""
    k = min(k, scores.shape[1])
    # rank of the true label: number of scores strictly above it
    true = scores[np.arange(len(y)), y]
    rank = np.sum(scores > true[:, None], axis=1)
    return float(np.mean(rank < k))


def evaluate(model, dataset, topk=(1, 5, 10), embeddings=None):
    """Top-k accuracies, or mean per-label auROC/auPRC for multi-label data.

    Accuracies are fractions in [0, 1], keyed ``top1``, ``top5``, ...
    """
    if len(dataset) == 0:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    E = model.embed(dataset.sets) if embeddings is None else embeddings
    scores = model.classifier.decision_function(E)
    if dataset.mode == "multilabel":
        Y = dataset.y
        aucs, prcs = [], []
        for c in range(Y.shape[1]):
            if 0 < Y[:, c].sum() < len(Y):
                aucs.append(roc_auc_score(Y[:, c], scores[:, c]))
                prcs.append(average_precision_score(Y[:, c], scores[:, c]))
        return {"auroc": float(np.mean(aucs)) if aucs else float("nan"),
                "auprc": float(np.mean(prcs)) if prcs else float("nan")}
    y = dataset.y
    out = {f"top{k}": topk_accuracy(scores, y, k) for k in topk}
    out["loss"] = cross_entropy(scores, y)[0]
    return out


def _fit_classifier(E, y, n_classes, config, init=None):
    clf = init.copy() if init is not None else LinearClassifier.zeros(n_classes, E.shape[1], config.lam)
    clf.lam = config.lam
    history = clf.fit(E, y, tol=config.refit_tol, max_iter=config.refit_max_iter)
    return clf, history


def fit_feature_maps(train, config):
    """Unsupervised Nyström anchors and references for a training set."""
    if len(train) == 0:
        raise InsufficientData("empty training set")
    pool = train.pooled_features(config.max_fit_features, seed=config.seed)
    spec = KernelSpec(config.kernel, config.sigma)
    nystrom = fit_nystrom(pool, config.k, spec, config.anchor_method, seed=config.seed,
                          ridge=config.ridge)
    psi_pool = embed_features(nystrom, pool)
    bank_kwargs = dict(sigma_pos=config.sigma_pos, pooling=config.pooling)
    if config.ref_method == "kmeans":
        psi_sets = None
        if config.q > 1:
            psi_sets = [embed_features(nystrom, X) for X in _subsample_sets(train, config)]
        bank = fit_refs_kmeans(psi_pool, config.p, config.q, seed=config.seed, sets=psi_sets,
                               epsilon=config.epsilon, n_iter=config.sinkhorn_iters, **bank_kwargs)
    else:
        psi_sets = [embed_features(nystrom, X) for X in _subsample_sets(train, config)]
        bank = fit_refs_wasserstein(psi_sets, config.p, config.q, epsilon=config.epsilon,
                                    inner_iters=config.sinkhorn_iters,
                                    outer_iters=config.wasserstein_outer_iters,
                                    seed=config.seed, **bank_kwargs).bank
    return nystrom, bank


def _subsample_sets(train, config, limit=3000):
    if len(train) <= limit:
        return train.sets
    idx = np.sort(np.random.default_rng(config.seed).choice(len(train), limit, replace=False))
    return [train.sets[i] for i in idx]


def train_unsupervised(train, config, val=None, test=None):
    """Fit anchors and references without labels, then the classifier.

    Returns
    -------
    model : OTKEModel
    metrics : dict
        ``train``, ``val`` and ``test`` evaluations (when given) and the
        classifier objective trace.
    """
    nystrom, bank = fit_feature_maps(train, config)
    multilabel = train.mode == "multilabel"
    model = OTKEModel(nystrom, bank, None, multilabel)
    E = model.embed(train.sets)
    model.classifier, history = _fit_classifier(E, train.y, train.num_classes, config)
    metrics = {"train": evaluate(model, train, embeddings=E), "refit_history": history}
    if val is not None and len(val):
        metrics["val"] = evaluate(model, val)
    if test is not None and len(test):
        metrics["test"] = evaluate(model, test)
    return model, metrics


def train_mean_pooling(train, config, nystrom=None):
    """Baseline: mean of the Nyström features, then the same classifier.

    Returns ``(nystrom, classifier)``.
    """
    if nystrom is None:
        pool = train.pooled_features(config.max_fit_features, seed=config.seed)
        nystrom = fit_nystrom(pool, config.k, KernelSpec(config.kernel, config.sigma),
                              config.anchor_method, seed=config.seed, ridge=config.ridge)
    E = mean_pool(train.sets, nystrom)
    clf, _ = _fit_classifier(E, train.y, train.num_classes, config)
    return nystrom, clf


def mean_pool(sets, nystrom):
    return np.stack([embed_features(nystrom, X).mean(axis=0) for X in sets])


def _selection_key(metrics):
    if "top1" in metrics:
        return (metrics["top1"], -metrics["loss"])
    return (metrics["auroc"], 0.0)


def _val_loss(model, val, E=None):
    E = model.embed(val.sets) if E is None else E
    loss, _ = cross_entropy(model.classifier.decision_function(E), val.y)
    return loss


def _run_epoch(model, train, config, opt, epoch):
    # one pass of Adam over shuffled batches, then the classifier refit; updates model in place
    losses = []
    for batch in make_batches(train, config.batch_size, seed=[config.seed, epoch], shuffle=True):
        loss, tape = forward_loss(batch, model.nystrom, model.bank, model.classifier)
        if not np.isfinite(loss):
            raise NonFiniteError("loss is not finite")
        grads = backward(tape)
        params = {"refs": model.bank.refs, "anchors": model.nystrom.anchors}
        if config.schedule == "joint":
            params.update(W=model.classifier.W, bias=model.classifier.bias)
        new = opt.step(params, grads)
        if not all(np.all(np.isfinite(v)) for v in new.values()):
            raise NonFiniteError("parameters are not finite")
        model.bank = model.bank.replace(refs=new["refs"])
        model.nystrom = NystromMap(new["anchors"], model.nystrom.spec, model.nystrom.ridge)
        if config.schedule == "joint":
            model.classifier = LinearClassifier(new["W"], new["bias"], model.classifier.lam)
        losses.append(loss)
    if config.schedule == "alternating" and epoch % config.phase_epochs == 0:
        E = model.embed(train.sets)
        model.classifier, _ = _fit_classifier(E, train.y, train.num_classes, config, model.classifier)
    return losses


def train_supervised(train, config, init, val=None, callback=None):
    """End-to-end training started from an unsupervised model.

    With ``schedule="alternating"`` each round runs ``phase_epochs`` epochs
    of Adam on the references and anchors with the classifier frozen, then
    refits the classifier on the new embeddings. ``"joint"`` also updates
    the classifier with Adam. The learning rate halves after
    ``lr_halving_patience`` epochs without a decrease of the validation
    loss (training loss when no validation set is given). The returned
    model is the best one on the validation set, the initial model
    included.

    Parameters
    ----------
    callback : callable, optional
        Called after every epoch with a dict ``epoch, train_loss, val_acc, lr``.
    """
    model = init.copy()
    history = []
    has_val = val is not None and len(val) > 0
    best_model = init.copy()
    best_key = _selection_key(evaluate(init, val)) if has_val else None
    if config.epochs == 0:
        return best_model, {"history": history, "best_epoch": 0}
    model.bank = model.bank.replace(n_iter=config.sup_sinkhorn_iters)
    opt = Adam(config.lr)
    best_monitor = np.inf
    stale = 0
    best_epoch = 0
    last_finite = 0
    for epoch in range(1, config.epochs + 1):
        try:
            losses = _run_epoch(model, train, config, opt, epoch)
        except NonFiniteError as exc:
            raise NonFiniteError(f"training diverged at epoch {epoch}: {exc}", last_finite) from exc
        last_finite = epoch
        record = {"epoch": epoch, "train_loss": float(np.mean(losses)), "lr": opt.lr,
                  "median_batch_loss": float(np.median(losses))}
        if has_val:
            val_metrics = evaluate(model, val)
            monitor = val_metrics.get("loss", -val_metrics.get("auroc", 0.0))
            record["val_acc"] = val_metrics.get("top1", val_metrics.get("auroc"))
            key = _selection_key(val_metrics)
            if key > best_key:
                best_key, best_model, best_epoch = key, model.copy(), epoch
        else:
            monitor = record["train_loss"]
            best_model, best_epoch = model.copy(), epoch
        if monitor < best_monitor:
            best_monitor, stale = monitor, 0
        else:
            stale += 1
            if config.lr_halving_patience and stale >= config.lr_halving_patience:
                opt.lr *= 0.5
                stale = 0
        history.append(record)
        if callback is not None:
            callback(record)
        log.debug("epoch %d: %s", epoch, record)
    return best_model, {"history": history, "best_epoch": best_epoch}


def _score(metrics):
    return metrics.get("top1", metrics.get("auroc"))


def select_unsupervised(train, val, config, grids):
    """Grid search of the unsupervised model on the validation set.

    Parameters
    ----------
    grids : dict
        Lists of candidate values keyed by TrainConfig field among
        ``lam``, ``epsilon``, ``sigma`` and ``sigma_pos``. Missing keys
        keep the value from ``config``.

    Returns
    -------
    model : OTKEModel
        Best candidate; ties keep the earliest in grid order.
    config : TrainConfig
        ``config`` with the selected values.
    trials : list of dict
        One entry per candidate with its values and validation score.
    """
    outer_keys = [k for k in ("epsilon", "sigma", "sigma_pos") if k in grids]
    lams = grids.get("lam", [config.lam])
    best = (None, None, -np.inf)
    trials = []
    for values in itertools.product(*(grids[k] for k in outer_keys)):
        cfg = replace(config, **dict(zip(outer_keys, values)))
        nystrom, bank = fit_feature_maps(train, cfg)
        model = OTKEModel(nystrom, bank, None, train.mode == "multilabel")
        E, Ev = model.embed(train.sets), model.embed(val.sets)
        for lam in lams:
            cfg_lam = replace(cfg, lam=lam)
            model.classifier, _ = _fit_classifier(E, train.y, train.num_classes, cfg_lam)
            score = _score(evaluate(model, val, embeddings=Ev))
            trials.append({**dict(zip(outer_keys, values)), "lam": lam, "val_score": score})
            if score > best[2]:
                best = (model.copy(), cfg_lam, score)
    return best[0], best[1], trials


def select_supervised(train, val, config, init, lrs, callback=None):
    """Run supervised training for each learning rate; keep the best on ``val``.

    Returns ``(model, config, info)`` where ``info`` holds the training
    history of the selected run and the score of every candidate.
    """
    best = (None, None, None, -np.inf)
    scores = []
    for lr in lrs:
        cfg = replace(config, lr=lr)
        model, info = train_supervised(train, cfg, init, val, callback=callback)
        score = _score(evaluate(model, val))
        scores.append({"lr": lr, "val_score": score})
        if score > best[3]:
            best = (model, cfg, info, score)
    model, cfg, info, _ = best
    info["grid"] = scores
    return model, cfg, info
