"""Two-layer mean-aggregator GraphSAGE, trained full-batch on a labeled node mask.

Each layer computes ``relu([h_v, mean_{u in N(v)} h_u] @ W + b)``; a linear
projection then produces K logits per node. N(v) is the undirected
neighbor set without self-loops, capped to the highest-volume neighbors.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateLabels, DivergenceError, MissingFeatures, ShapeError
from .graphstore import TransactionGraph, _ranked
from .learners.common import Standardizer, derived_rng, one_hot, softmax

SAGE_DEFAULTS = {"hidden": 64, "layers": 2, "learning_rate": 1e-2, "epochs": 300, "patience": 20,
                 "fanout_cap": 25, "validation_fraction": 0.1}


def mean_aggregate(h, neighbors):
    """Element-wise mean of ``h[u]`` over ``neighbors`` in sorted order; zeros if empty.

    ``h`` maps node -> vector. An empty neighborhood needs at least one
    vector in ``h`` to know the width.
    """
    nbrs = sorted(neighbors)
    widths = {np.asarray(v).shape for v in h.values()}
    if len(widths) > 1:
        raise ShapeError(f"embedding widths differ: {sorted(widths)}")
    if not nbrs:
        width = widths.pop() if widths else (0,)
        return np.zeros(width)
    acc = np.zeros_like(np.asarray(h[nbrs[0]], dtype=float))
    for u in nbrs:
        acc = acc + np.asarray(h[u], dtype=float)
    return acc / len(nbrs)


def adjacency(g: TransactionGraph, fanout_cap=25):
    """Row-normalized sparse mean operator over ``g.nodes`` (sorted order)."""
    index = {n: i for i, n in enumerate(g.nodes)}
    rows, cols, vals = [], [], []
    for i, v in enumerate(g.nodes):
        nbrs = _ranked(g, v, g.both_adj[v], "both", fanout_cap)
        for u in nbrs:
            rows.append(i)
            cols.append(index[u])
            vals.append(1.0 / len(nbrs))
    n = len(g.nodes)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


class SageModel:
    kind = "sage"

    def __init__(self, weights, biases, standardizer, K, params=None, seed=0, epochs_run=0,
                 history=None, provenance=None):
        self.weights = [np.asarray(W, dtype=float) for W in weights]
        self.biases = [np.asarray(v, dtype=float) for v in biases]
        self.standardizer = standardizer
        self.K = K
        self.n_features = self.weights[0].shape[0] // 2
        self.params = {**SAGE_DEFAULTS, **(params or {})}
        self.seed = seed
        self.epochs_run = epochs_run
        self.history = list(history or [])
        self.provenance = dict(provenance or {})

    def predict_proba_graph(self, g, X):
        A = adjacency(g, self.params["fanout_cap"])
        Z = self.standardizer.transform(_aligned(g, X, self.n_features))
        return softmax(_forward(self.weights, self.biases, A, Z)[-1])

    def predict_graph(self, g, X):
        return np.argmax(self.predict_proba_graph(g, X), axis=1)


def _aligned(g, X, width):
    """Feature rows for ``g.nodes``; ``X`` is a FeatureMatrix or an array already aligned."""
    if hasattr(X, "addresses"):
        index = {a: i for i, a in enumerate(X.addresses)}
        missing = [n for n in g.nodes if n not in index]
        if missing:
            raise MissingFeatures(f"no feature row for node {missing[0]}")
        X = X.values[[index[n] for n in g.nodes]]
    X = np.asarray(X, dtype=float)
    if X.shape[0] != len(g.nodes):
        raise MissingFeatures(f"{X.shape[0]} feature rows for {len(g.nodes)} graph nodes")
    if X.shape[1] != width and width is not None:
        raise ShapeError(f"expected {width} feature columns, got {X.shape[1]}")
    return X


def sage_forward(m: SageModel, g, X):
    """Per-node class probabilities, rows in ``g.nodes`` order."""
    return m.predict_proba_graph(g, X)


def _forward(weights, biases, A, X):
    """Activations: [X, H1, ..., logits]."""
    acts = [X]
    h = X
    for W, b in zip(weights[:-1], biases[:-1]):
        h = np.maximum(np.hstack([h, A @ h]) @ W + b, 0.0)
        acts.append(h)
    acts.append(h @ weights[-1] + biases[-1])
    return acts


def loss_and_grads(weights, biases, A, X, Y, mask):
    """Mean cross-entropy over ``mask`` rows and gradients for every parameter."""
    acts = _forward(weights, biases, A, X)
    P = softmax(acts[-1])
    idx = np.flatnonzero(mask)
    m = len(idx)
    loss = -np.log(np.maximum((P[idx] * Y[idx]).sum(axis=1), 1e-300)).sum() / m
    delta = np.zeros_like(P)
    delta[idx] = (P[idx] - Y[idx]) / m
    L = len(weights)
    gW, gb = [None] * L, [None] * L
    gW[-1] = acts[-2].T @ delta
    gb[-1] = delta.sum(axis=0)
    dh = delta @ weights[-1].T
    AT = A.T.tocsr()
    for l in range(L - 2, -1, -1):
        h_in = acts[l]
        dz = dh * (acts[l + 1] > 0)
        gW[l] = np.hstack([h_in, A @ h_in]).T @ dz
        gb[l] = dz.sum(axis=0)
        if l == 0:
            break
        width = h_in.shape[1]
        dcat = dz @ weights[l].T
        dh = dcat[:, :width] + AT @ dcat[:, width:]
    return loss, gW, gb


def init_sage(n_features, hidden, K, layers, rng):
    sizes_in = [2 * n_features] + [2 * hidden] * (layers - 1)
    weights, biases = [], []
    for fan_in in sizes_in:
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, hidden)))
        biases.append(rng.uniform(-bound, bound, size=hidden))
    bound = 1.0 / np.sqrt(hidden)
    weights.append(rng.uniform(-bound, bound, size=(hidden, K)))
    biases.append(rng.uniform(-bound, bound, size=K))
    return weights, biases


def train_sage(g: TransactionGraph, X, y, train_mask, params=None, seed=0, K=3) -> SageModel:
    """Full-batch Adam on masked cross-entropy with validation early stopping.

    ``y`` holds a label per graph node (ignored outside ``train_mask``);
    ``train_mask`` is a boolean vector over ``g.nodes``. A stratified slice of
    the masked nodes is held out for early stopping on macro-F1.
    """
    from .evaluation import macro_f1
    from .learners.mlp import _stratified_holdout

    p = {**SAGE_DEFAULTS, **(params or {})}
    mask = np.asarray(train_mask, dtype=bool)
    if mask.shape != (len(g.nodes),):
        raise ShapeError("train_mask must have one entry per graph node")
    if not mask.any():
        raise DegenerateLabels("train_mask selects no nodes")
    y = np.asarray(y)
    X = _aligned(g, X, None)
    train_idx = np.flatnonzero(mask)
    std = Standardizer.fit(X[train_idx])
    Z = std.transform(X)
    A = adjacency(g, p["fanout_cap"])
    y_masked = np.where(mask, y, 0).astype(np.int64)
    Y = one_hot(y_masked, K)

    fit_mask, val_idx = mask.copy(), train_idx
    if p["validation_fraction"] > 0:
        tr, val = _stratified_holdout(y[train_idx], p["validation_fraction"], derived_rng(seed, 1))
        if len(val) and len(tr):
            fit_mask = np.zeros_like(mask)
            fit_mask[train_idx[tr]] = True
            val_idx = train_idx[val]

    weights, biases = init_sage(Z.shape[1], p["hidden"], K, p["layers"], derived_rng(seed, 0))
    params_ = weights + biases
    L = len(weights)
    mom = [np.zeros_like(q) for q in params_]
    vel = [np.zeros_like(q) for q in params_]
    beta1, beta2, eps, lr = 0.9, 0.999, 1e-8, p["learning_rate"]
    best = (-1.0, [q.copy() for q in params_])
    stale, epochs_run, history = 0, 0, []
    for epoch in range(int(p["epochs"])):
        loss, gW, gb = loss_and_grads(params_[:L], params_[L:], A, Z, Y, fit_mask)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss at epoch {epoch}")
        step = epoch + 1
        for i, gr in enumerate(gW + gb):
            mom[i] = beta1 * mom[i] + (1 - beta1) * gr
            vel[i] = beta2 * vel[i] + (1 - beta2) * gr * gr
            params_[i] = params_[i] - lr * (mom[i] / (1 - beta1 ** step)) / (np.sqrt(vel[i] / (1 - beta2 ** step)) + eps)
        epochs_run = step
        logits = _forward(params_[:L], params_[L:], A, Z)[-1]
        score = macro_f1(y[val_idx], np.argmax(logits[val_idx], axis=1), K)
        history.append(score)
        if score > best[0]:
            best = (score, [q.copy() for q in params_])
            stale = 0
        else:
            stale += 1
            if stale >= p["patience"]:
                break
    params_ = best[1]
    return SageModel(params_[:L], params_[L:], std, K, p, seed, epochs_run, history,
                     provenance={"train_ids": [g.nodes[i] for i in train_idx]})


class NodePredictor:
    """Row-wise ``predict`` for a subset of graph nodes.

    Permutation importance shuffles the rows it is given; this adapter writes
    them back into the full node feature matrix before the graph forward
    pass, so neighbors see the perturbed values too.
    """

    kind = "sage"

    def __init__(self, model: SageModel, g: TransactionGraph, X, nodes):
        self.model = model
        self.g = g
        self.K = model.K
        self.X = _aligned(g, X, model.n_features).copy()
        index = {n: i for i, n in enumerate(g.nodes)}
        self.rows = np.array([index[n] for n in nodes], dtype=np.int64)
        self.A = adjacency(g, model.params["fanout_cap"])

    def predict_proba(self, X_rows):
        X = self.X.copy()
        X[self.rows] = X_rows
        Z = self.model.standardizer.transform(X)
        return softmax(_forward(self.model.weights, self.model.biases, self.A, Z)[-1])[self.rows]

    def predict(self, X_rows):
        return np.argmax(self.predict_proba(X_rows), axis=1)
