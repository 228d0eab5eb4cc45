"""Multinomial logistic regression fitted by accelerated proximal gradient.

Objective (scaled by 1/n):

    (1/n) * sum_i w_i * CE_i  +  ||B||_1 / (C n)        penalty="l1"
    (1/n) * sum_i w_i * CE_i  +  ||B||_F^2 / (2 C n)    penalty="l2"

which is the conventional ``C * sum(loss) + penalty`` form divided by ``C n``.
Intercepts are not penalized.
"""

from __future__ import annotations

import math

import numpy as np

from .common import Dataset, Standardizer, TrainConfig, check_labels, one_hot, sample_weights, softmax


class LinearModel:
    kind = "logreg"

    def __init__(self, B, b, standardizer, K, params=None, seed=0, n_iter=0, provenance=None):
        self.B = np.asarray(B, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.standardizer = standardizer
        self.K = K
        self.n_features = self.B.shape[1]
        self.params = dict(params or {})
        self.seed = seed
        self.n_iter = n_iter
        self.provenance = dict(provenance or {})

    def decision_function(self, X):
        from .trees import _check_width

        Z = self.standardizer.transform(_check_width(X, self.n_features))
        return Z @ self.B.T + self.b

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)


def smooth_loss_and_grad(B, b, Z, Y, w):
    """Weighted mean cross-entropy and its gradient w.r.t. (B, b)."""
    n = Z.shape[0]
    P = softmax(Z @ B.T + b)
    ll = np.log(np.maximum((P * Y).sum(axis=1), 1e-300))
    loss = -(w * ll).sum() / n
    R = (P - Y) * w[:, None] / n
    return loss, R.T @ Z, R.sum(axis=0)


def _penalty(B, penalty, lam):
    if penalty == "l1":
        return lam * np.abs(B).sum()
    return 0.5 * lam * (B ** 2).sum()


def _prox(B, step, penalty, lam):
    if penalty == "l1":
        return np.sign(B) * np.maximum(np.abs(B) - step * lam, 0.0)
    return B


def train_logreg(d: Dataset, cfg: TrainConfig | None = None) -> LinearModel:
    cfg = cfg or TrainConfig("logreg")
    p = cfg.resolved()
    check_labels(d)
    if p["penalty"] not in ("l1", "l2"):
        raise ValueError("penalty must be 'l1' or 'l2'")
    if not p["C"] > 0:
        raise ValueError("C must be positive")
    n, dim = d.X.shape
    K = d.K
    std = Standardizer.fit(d.X)
    Z = std.transform(d.X)
    Y = one_hot(d.y, K)
    w = sample_weights(d.y, K, p["class_weight"])
    lam = 1.0 / (p["C"] * n)
    penalty = p["penalty"]

    Zt = np.hstack([Z, np.ones((n, 1))])
    L = 0.5 * np.linalg.norm(Zt, 2) ** 2 * w.max() / n
    if penalty == "l2":
        L += lam
    L = max(L, 1e-12)
    step = 1.0 / L

    def objective(B, b):
        loss, _, _ = smooth_loss_and_grad(B, b, Z, Y, w)
        return loss + _penalty(B, penalty, lam)

    B = np.zeros((K, dim))
    b = np.zeros(K)
    yB, yb = B.copy(), b.copy()
    t = 1.0
    F_old = objective(B, b)
    it = 0
    for it in range(1, int(p["max_iter"]) + 1):
        _, gB, gb = smooth_loss_and_grad(yB, yb, Z, Y, w)
        if penalty == "l2":
            gB = gB + lam * yB
        B_new = _prox(yB - step * gB, step, penalty, lam)
        b_new = yb - step * gb
        F_new = objective(B_new, b_new)
        if F_new > F_old:
            # momentum overshoot: restart from the last accepted iterate
            yB, yb, t = B.copy(), b.copy(), 1.0
            continue
        t_new = (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0
        yB = B_new + ((t - 1.0) / t_new) * (B_new - B)
        yb = b_new + ((t - 1.0) / t_new) * (b_new - b)
        done = F_old - F_new < p["tol"]
        B, b, F_old, t = B_new, b_new, F_new, t_new
        if done:
            break
    B[:, std.constant] = 0.0
    return LinearModel(B, b, std, K, p, cfg.seed, n_iter=it, provenance={"train_ids": list(d.addresses)})
