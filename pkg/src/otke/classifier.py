"""L2-regularized linear classifier on fixed-size embeddings."""
import numpy as np
from scipy.special import expit, log_softmax, softmax

from .exceptions import DimensionMismatch, NonFiniteError

__all__ = ["LinearClassifier", "cross_entropy"]


def cross_entropy(logits, y):
    """Mean loss and its gradient w.r.t. the logits.

    ``y`` is an int array for single-label data (softmax cross-entropy) or
    an (m, C) 0/1 matrix for multi-label data (mean binary cross-entropy).
    """
    m = logits.shape[0]
    if y.ndim == 1:
        logp = log_softmax(logits, axis=1)
        loss = -np.mean(logp[np.arange(m), y])
        grad = softmax(logits, axis=1)
        grad[np.arange(m), y] -= 1.0
        return float(loss), grad / m
    # log(1 + e^x) - y x, stable form
    loss = np.mean(np.logaddexp(0.0, logits) - y * logits)
    return float(loss), (expit(logits) - y) / y.size


class LinearClassifier:
    """Affine scores ``E W^T + bias`` trained with cross-entropy + (lam/2)|W|^2.

    Parameters
    ----------
    W : ndarray of shape (C, D)
    bias : ndarray of shape (C,)
    lam : float
        L2 penalty on ``W`` (the bias is not penalized).
    """

    def __init__(self, W, bias=None, lam=0.0):
        self.W = np.asarray(W, dtype=np.float64)
        self.bias = np.zeros(self.W.shape[0]) if bias is None else np.asarray(bias, dtype=np.float64)
        self.lam = float(lam)

    @classmethod
    def zeros(cls, n_classes, dim, lam=0.0):
        return cls(np.zeros((n_classes, dim)), np.zeros(n_classes), lam)

    @property
    def n_classes(self):
        return self.W.shape[0]

    def copy(self):
        return LinearClassifier(self.W.copy(), self.bias.copy(), self.lam)

    def decision_function(self, E):
        E = np.asarray(E, dtype=np.float64)
        if E.ndim != 2 or E.shape[1] != self.W.shape[1]:
            raise DimensionMismatch(f"embeddings of shape {E.shape} do not match W {self.W.shape}")
        return E @ self.W.T + self.bias

    def predict_proba(self, E, multilabel=False):
        scores = self.decision_function(E)
        return expit(scores) if multilabel else softmax(scores, axis=1)

    def predict(self, E):
        return np.argmax(self.decision_function(E), axis=1)

    def objective(self, E, y):
        """Regularized training loss and gradients ``(loss, dW, dbias)``."""
        loss, dlogits = cross_entropy(self.decision_function(E), y)
        loss += 0.5 * self.lam * np.sum(self.W ** 2)
        return loss, dlogits.T @ E + self.lam * self.W, dlogits.sum(axis=0)

    def fit(self, E, y, tol=1e-6, max_iter=10000):
        """Full-batch gradient descent with a fixed ``1/L`` step.

        ``L`` bounds the Lipschitz constant of the gradient, so every
        accepted step decreases the objective. Nesterov momentum is used
        and dropped whenever it would increase the loss. Stops when the
        gradient norm falls below ``tol``.

        Returns the list of objective values, one per iteration.
        """
        E = np.asarray(E, dtype=np.float64)
        y = np.asarray(y)
        m = E.shape[0]
        Xa = np.hstack([E, np.ones((m, 1))])
        curvature = 0.5 if y.ndim == 1 else 0.25 / y.shape[1]
        L = curvature * np.linalg.norm(Xa, 2) ** 2 / m + self.lam
        step = 1.0 / L
        theta = np.hstack([self.W, self.bias[:, None]])
        prev = theta.copy()

        multilabel = y.ndim == 2
        if not multilabel:
            onehot = np.zeros((m, theta.shape[0]))
            onehot[np.arange(m), y] = 1.0
        penalty = np.ones_like(theta)
        penalty[:, -1] = 0.0  # bias is not penalized

        def evaluate(th):
            # same objective as ``objective`` on the augmented matrix, without the per-call checks
            logits = Xa @ th.T
            if multilabel:
                loss = np.mean(np.logaddexp(0.0, logits) - y * logits)
                dlogits = (expit(logits) - y) / y.size
            else:
                shifted = logits - logits.max(axis=1, keepdims=True)
                expd = np.exp(shifted)
                norm = expd.sum(axis=1, keepdims=True)
                loss = np.mean(np.log(norm[:, 0]) - np.sum(shifted * onehot, axis=1))
                dlogits = (expd / norm - onehot) / m
            reg = self.lam * penalty * th
            return loss + 0.5 * np.sum(reg * th), dlogits.T @ Xa + reg

        loss, grad = evaluate(theta)
        history = [loss]
        t = 1.0
        for _ in range(max_iter):
            if not np.isfinite(loss):
                raise NonFiniteError("classifier objective is not finite")
            if np.linalg.norm(grad) < tol:
                break
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            look = theta + ((t - 1.0) / t_next) * (theta - prev)
            look_loss, look_grad = evaluate(look)
            cand = look - step * look_grad
            cand_loss, cand_grad = evaluate(cand)
            if cand_loss > loss:
                # momentum overshot: plain gradient step from theta instead
                t_next = 1.0
                cand = theta - step * grad
                cand_loss, cand_grad = evaluate(cand)
            prev, theta, t = theta, cand, t_next
            loss, grad = cand_loss, cand_grad
            history.append(loss)
        self.W, self.bias = theta[:, :-1].copy(), theta[:, -1].copy()
        if not np.isfinite(loss):
            raise NonFiniteError("classifier objective is not finite")
        return history
