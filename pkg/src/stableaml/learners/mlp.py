"""Two-hidden-layer ReLU network trained with Adam and inverted dropout."""

from __future__ import annotations

import numpy as np

from ..errors import DivergenceError
from .common import Dataset, Standardizer, TrainConfig, check_labels, derived_rng, one_hot, sample_weights, softmax


class MlpModel:
    kind = "mlp"

    def __init__(self, weights, biases, standardizer, K, params=None, seed=0, epochs_run=0,
                 history=None, provenance=None):
        self.weights = [np.asarray(W, dtype=float) for W in weights]
        self.biases = [np.asarray(v, dtype=float) for v in biases]
        self.standardizer = standardizer
        self.K = K
        self.n_features = self.weights[0].shape[0]
        self.params = dict(params or {})
        self.seed = seed
        self.epochs_run = epochs_run
        self.history = list(history or [])
        self.provenance = dict(provenance or {})

    def logits(self, X):
        from .trees import _check_width

        h = self.standardizer.transform(_check_width(X, self.n_features))
        return forward(self.weights, self.biases, h)[-1]

    def predict_proba(self, X):
        return softmax(self.logits(X))

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)


def init_params(sizes, rng):
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return weights, biases


def forward(weights, biases, X, masks=None):
    """Activations per layer; the last entry holds the logits."""
    acts = [X]
    h = X
    last = len(weights) - 1
    for i, (W, v) in enumerate(zip(weights, biases)):
        z = h @ W + v
        if i == last:
            acts.append(z)
            break
        h = np.maximum(z, 0.0)
        if masks is not None:
            h = h * masks[i]
        acts.append(h)
    return acts


def loss_and_grads(weights, biases, X, Y, w=None, masks=None):
    """Weighted mean cross-entropy and gradients w.r.t. every weight and bias.

    ``masks`` are pre-scaled dropout multipliers for the hidden layers.
    """
    n = X.shape[0]
    w = np.ones(n) if w is None else w
    acts = forward(weights, biases, X, masks)
    P = softmax(acts[-1])
    loss = -(w * np.log(np.maximum((P * Y).sum(axis=1), 1e-300))).sum() / n
    delta = (P - Y) * w[:, None] / n
    gW = [None] * len(weights)
    gb = [None] * len(weights)
    for i in range(len(weights) - 1, -1, -1):
        gW[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i == 0:
            break
        delta = delta @ weights[i].T
        if masks is not None:
            delta = delta * masks[i - 1]
        delta = delta * (acts[i] > 0)
    return loss, gW, gb


def _stratified_holdout(y, frac, rng):
    val = []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        if len(idx) < 2:
            continue
        idx = idx[rng.permutation(len(idx))]
        val.extend(idx[: max(1, int(round(frac * len(idx))))].tolist())
    val = np.array(sorted(val), dtype=np.int64)
    train = np.setdiff1d(np.arange(len(y)), val)
    return train, val


def train_mlp(d: Dataset, cfg: TrainConfig | None = None) -> MlpModel:
    from ..evaluation import macro_f1

    cfg = cfg or TrainConfig("mlp")
    p = cfg.resolved()
    check_labels(d)
    K = d.K
    std = Standardizer.fit(d.X)
    Z = std.transform(d.X)
    Y = one_hot(d.y, K)
    w_all = sample_weights(d.y, K, p["class_weight"])
    sizes = [d.X.shape[1], *p["hidden"], K]
    weights, biases = init_params(sizes, derived_rng(cfg.seed, 0))

    frac = p["validation_fraction"]
    tr, val = (np.arange(len(d)), np.array([], dtype=np.int64))
    if frac > 0:
        tr, val = _stratified_holdout(d.y, frac, derived_rng(cfg.seed, 1))
    if len(val) == 0:
        val = tr

    params = weights + biases
    m = [np.zeros_like(q) for q in params]
    v = [np.zeros_like(q) for q in params]
    beta1, beta2, eps, lr = 0.9, 0.999, 1e-8, p["learning_rate"]
    step = 0
    keep = 1.0 - p["dropout"]
    best = (-1.0, [q.copy() for q in params])
    stale, epochs_run, history = 0, 0, []
    n_layers = len(weights)
    for epoch in range(int(p["epochs"])):
        rng = derived_rng(cfg.seed, 2, epoch)
        order = tr[rng.permutation(len(tr))]
        for start in range(0, len(order), int(p["batch_size"])):
            batch = order[start:start + int(p["batch_size"])]
            masks = None
            if p["dropout"] > 0:
                masks = [(rng.random((len(batch), s)) < keep) / keep for s in p["hidden"]]
            loss, gW, gb = loss_and_grads(params[:n_layers], params[n_layers:], Z[batch], Y[batch],
                                          w_all[batch], masks)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            step += 1
            for i, g in enumerate(gW + gb):
                m[i] = beta1 * m[i] + (1 - beta1) * g
                v[i] = beta2 * v[i] + (1 - beta2) * g * g
                mh = m[i] / (1 - beta1 ** step)
                vh = v[i] / (1 - beta2 ** step)
                params[i] = params[i] - lr * mh / (np.sqrt(vh) + eps)
        epochs_run = epoch + 1
        logits = forward(params[:n_layers], params[n_layers:], Z[val])[-1]
        score = macro_f1(d.y[val], np.argmax(logits, axis=1), K)
        history.append(score)
        if score > best[0]:
            best = (score, [q.copy() for q in params])
            stale = 0
        else:
            stale += 1
            if stale >= p["patience"]:
                break
    params = best[1] if epochs_run else params
    return MlpModel(params[:n_layers], params[n_layers:], std, K, p, cfg.seed, epochs_run, history,
                    provenance={"train_ids": list(d.addresses)})
