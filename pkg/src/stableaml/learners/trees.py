"""CART, random forest and Newton-boosted trees over a shared array-backed tree.

Split search is exact: candidate thresholds are midpoints between consecutive
distinct values of a feature inside the node, and rows with ``x <= threshold``
go left. Among equal-gain candidates the lowest feature index wins, then the
lowest threshold.
"""

from __future__ import annotations

import numpy as np

from .common import (
    Dataset,
    TrainConfig,
    check_labels,
    derived_rng,
    one_hot,
    resolve_max_features,
    sample_weights,
    softmax,
)

_MIN_GAIN = 1e-12


class Tree:
    """Flat binary tree. ``feature[i] == -1`` marks a leaf."""

    __slots__ = ("feature", "threshold", "left", "right", "value", "cover", "gain")

    def __init__(self, feature, threshold, left, right, value, cover, gain):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=float)
        self.cover = np.asarray(cover, dtype=float)
        self.gain = np.asarray(gain, dtype=float)

    @property
    def n_nodes(self):
        return len(self.feature)

    @property
    def depth(self):
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X):
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=np.int64)
        active = np.arange(len(X))
        while active.size:
            f = self.feature[node[active]]
            inner = f >= 0
            active = active[inner]
            if not active.size:
                break
            cur = node[active]
            go_left = X[active, self.feature[cur]] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
        return node

    def predict_value(self, X):
        return self.value[self.apply(X)]

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__slots__}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in cls.__slots__})


class _Growth:
    """Accumulates nodes in preorder."""

    def __init__(self, width):
        self.feature, self.threshold, self.left, self.right = [], [], [], []
        self.value, self.cover, self.gain = [], [], []
        self.width = width

    def add(self, value, cover):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        self.cover.append(cover)
        self.gain.append(0.0)
        return len(self.feature) - 1

    def tree(self):
        return Tree(self.feature, self.threshold, self.left, self.right,
                    np.array(self.value, dtype=float).reshape(-1, self.width), self.cover, self.gain)


def _sorted_node(X, idx, feats):
    Xs = X[np.ix_(idx, feats)]
    order = np.argsort(Xs, axis=0, kind="stable")
    xs = np.take_along_axis(Xs, order, axis=0)
    return order, xs


def _pick(score, xs, valid):
    """Best (feature column, position) in feature-major, position-ascending order."""
    score = np.where(valid, score, -np.inf)
    flat = score.T.ravel()
    j = int(np.argmax(flat))
    if not np.isfinite(flat[j]):
        return None
    n_pos = score.shape[0]
    col, pos = divmod(j, n_pos)
    lo, hi = xs[pos, col], xs[pos + 1, col]
    thr = (lo + hi) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return col, pos, thr, flat[j]


def _candidate_features(X, idx, rng, m, pool):
    """Up to ``m`` features from ``pool`` that vary inside the node.

    With ``rng`` the pool is visited in random order (constant features do not
    count toward ``m``); the chosen set is returned sorted.
    """
    sub = X[np.ix_(idx, pool)]
    varies = sub.min(axis=0) < sub.max(axis=0)
    if rng is None:
        return pool[varies]
    perm = rng.permutation(len(pool))
    chosen = [pool[i] for i in perm if varies[i]][:m]
    return np.array(sorted(chosen), dtype=np.int64)


def grow_classifier(X, Yw, cnt, rows, K, max_depth=None, min_samples_split=2, min_samples_leaf=1,
                    max_features=None, rng=None) -> Tree:
    """Gini CART on rows ``rows`` with class-weighted targets ``Yw`` (n x K) and
    row multiplicities ``cnt``. Leaves store class proportions."""
    d = X.shape[1]
    pool = np.arange(d)
    m = max_features or d
    out = _Growth(K)
    stack = [(np.asarray(rows, dtype=np.int64), 0, -1, False)]
    while stack:
        idx, depth, parent, is_right = stack.pop()
        totals = Yw[idx].sum(axis=0)
        W = totals.sum()
        n_node = cnt[idx].sum()
        node = out.add(totals / W if W > 0 else np.full(K, 1.0 / K), n_node)
        if parent >= 0:
            (out.right if is_right else out.left)[parent] = node
        if ((max_depth is not None and depth >= max_depth) or n_node < min_samples_split
                or np.count_nonzero(totals) <= 1 or len(idx) < 2):
            continue
        feats = _candidate_features(X, idx, rng if m < d else None, m, pool)
        if not len(feats):
            continue
        order, xs = _sorted_node(X, idx, feats)
        cum = np.cumsum(Yw[idx][order], axis=0)[:-1]
        cl = np.cumsum(cnt[idx][order], axis=0)[:-1]
        wl = cum.sum(axis=2)
        wr = W - wl
        with np.errstate(divide="ignore", invalid="ignore"):
            score = (cum ** 2).sum(axis=2) / wl + ((totals - cum) ** 2).sum(axis=2) / wr
        valid = (xs[1:] > xs[:-1]) & (cl >= min_samples_leaf) & (n_node - cl >= min_samples_leaf) & (wl > 0) & (wr > 0)
        best = _pick(score, xs, valid)
        if best is None:
            continue
        col, pos, thr, sc = best
        decrease = sc - (totals ** 2).sum() / W
        if decrease <= _MIN_GAIN:
            continue
        f = int(feats[col])
        out.feature[node], out.threshold[node], out.gain[node] = f, thr, decrease
        xcol = X[idx, f]
        stack.append((idx[xcol > thr], depth + 1, node, True))
        stack.append((idx[xcol <= thr], depth + 1, node, False))
    return out.tree()


def grow_newton(X, g, h, rows, feats, max_depth, reg_lambda=1.0, min_child_weight=1.0,
                min_samples_leaf=1, learning_rate=1.0) -> Tree:
    """Second-order regression tree; leaf value = -lr * G / (H + lambda)."""
    out = _Growth(1)
    lam = reg_lambda
    stack = [(np.asarray(rows, dtype=np.int64), 0, -1, False)]
    feats = np.asarray(feats, dtype=np.int64)
    while stack:
        idx, depth, parent, is_right = stack.pop()
        G, H = g[idx].sum(), h[idx].sum()
        node = out.add([-learning_rate * G / (H + lam)], float(len(idx)))
        if parent >= 0:
            (out.right if is_right else out.left)[parent] = node
        if depth >= max_depth or len(idx) < 2 * min_samples_leaf or len(idx) < 2:
            continue
        order, xs = _sorted_node(X, idx, feats)
        GL = np.cumsum(g[idx][order], axis=0)[:-1]
        HL = np.cumsum(h[idx][order], axis=0)[:-1]
        nl = np.arange(1, len(idx))[:, None]
        score = GL ** 2 / (HL + lam) + (G - GL) ** 2 / (H - HL + lam)
        valid = ((xs[1:] > xs[:-1]) & (HL >= min_child_weight) & (H - HL >= min_child_weight)
                 & (nl >= min_samples_leaf) & (len(idx) - nl >= min_samples_leaf))
        best = _pick(score, xs, valid)
        if best is None:
            continue
        col, pos, thr, sc = best
        gain = 0.5 * (sc - G ** 2 / (H + lam))
        if gain <= _MIN_GAIN:
            continue
        f = int(feats[col])
        out.feature[node], out.threshold[node], out.gain[node] = f, thr, gain
        xcol = X[idx, f]
        stack.append((idx[xcol > thr], depth + 1, node, True))
        stack.append((idx[xcol <= thr], depth + 1, node, False))
    return out.tree()


class TreeEnsembleModel:
    """``kind`` is ``cart`` (one tree), ``rf`` (averaged proportions) or ``gbm``
    (per-class additive logits; ``trees[m][k]`` is round m, class k, leaf values
    already scaled by the learning rate)."""

    def __init__(self, kind, trees, K, n_features, params=None, seed=0, base_score=None,
                 train_loss=None, provenance=None):
        self.kind = kind
        self.trees = trees
        self.K = K
        self.n_features = n_features
        self.params = dict(params or {})
        self.seed = seed
        self.base_score = None if base_score is None else np.asarray(base_score, dtype=float)
        self.train_loss = list(train_loss or [])
        self.provenance = dict(provenance or {})

    def iter_trees(self):
        """(tree, class index or None) pairs; None means the leaf holds a K-vector."""
        if self.kind == "gbm":
            for round_trees in self.trees:
                for k, t in enumerate(round_trees):
                    yield t, k
        else:
            for t in self.trees:
                yield t, None

    def decision_function(self, X):
        """GBM logits (n x K)."""
        X = np.asarray(X, dtype=float)
        F = np.tile(self.base_score, (len(X), 1))
        for round_trees in self.trees:
            for k, t in enumerate(round_trees):
                F[:, k] += t.predict_value(X)[:, 0]
        return F

    def predict_proba(self, X):
        X = _check_width(X, self.n_features)
        if self.kind == "gbm":
            return softmax(self.decision_function(X))
        P = np.zeros((len(X), self.K))
        for t in self.trees:
            P += t.predict_value(X)
        return P / len(self.trees)

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)


def _check_width(X, width):
    from ..errors import ShapeError

    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != width:
        raise ShapeError(f"expected {width} feature columns, got shape {X.shape}")
    return X


def _class_targets(d: Dataset, class_weight):
    w = sample_weights(d.y, d.K, class_weight)
    return one_hot(d.y, d.K) * w[:, None], w


def train_tree(d: Dataset, cfg: TrainConfig | None = None) -> TreeEnsembleModel:
    cfg = cfg or TrainConfig("cart")
    p = cfg.resolved()
    if len(d) == 0:
        raise ValueError("cannot grow a tree on an empty dataset")
    Yw, _ = _class_targets(d, p["class_weight"])
    cnt = np.ones(len(d))
    mf = resolve_max_features(p["max_features"], d.X.shape[1])
    tree = grow_classifier(d.X, Yw, cnt, np.arange(len(d)), d.K, p["max_depth"], p["min_samples_split"],
                           p["min_samples_leaf"], mf, derived_rng(cfg.seed, 0))
    return TreeEnsembleModel("cart", [tree], d.K, d.X.shape[1], p, cfg.seed,
                             provenance={"train_ids": list(d.addresses)})


def train_random_forest(d: Dataset, cfg: TrainConfig | None = None) -> TreeEnsembleModel:
    cfg = cfg or TrainConfig("rf")
    p = cfg.resolved()
    Yw_full, _ = _class_targets(d, p["class_weight"])
    n, dim = d.X.shape
    mf = resolve_max_features(p["max_features"], dim)
    trees = []
    for t in range(int(p["n_estimators"])):
        rng = derived_rng(cfg.seed, t)
        if p["bootstrap"]:
            cnt = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(float)
        else:
            cnt = np.ones(n)
        rows = np.flatnonzero(cnt)
        trees.append(grow_classifier(d.X, Yw_full * cnt[:, None], cnt, rows, d.K, p["max_depth"],
                                     p["min_samples_split"], p["min_samples_leaf"], mf, rng))
    return TreeEnsembleModel("rf", trees, d.K, dim, p, cfg.seed,
                             provenance={"train_ids": list(d.addresses)})


def class_log_priors(y, K, weights=None):
    w = np.ones(len(y)) if weights is None else weights
    pri = np.bincount(y, weights=w, minlength=K) / w.sum()
    return np.log(np.maximum(pri, 1e-12))


def train_gbm(d: Dataset, cfg: TrainConfig | None = None) -> TreeEnsembleModel:
    cfg = cfg or TrainConfig("gbm")
    p = cfg.resolved()
    check_labels(d, min_classes=1)
    n, dim = d.X.shape
    K = d.K
    w = sample_weights(d.y, K, p["class_weight"])
    Y = one_hot(d.y, K)
    base = class_log_priors(d.y, K, w)
    F = np.tile(base, (n, 1))
    n_rows = max(1, int(round(p["subsample"] * n)))
    n_cols = max(1, int(round(p["colsample"] * dim)))
    rounds, losses = [], []
    for m in range(int(p["n_estimators"])):
        rng = derived_rng(cfg.seed, m)
        P = softmax(F)
        rows = np.arange(n) if n_rows >= n else np.sort(rng.choice(n, size=n_rows, replace=False))
        round_trees = []
        for k in range(K):
            feats = np.arange(dim) if n_cols >= dim else np.sort(rng.choice(dim, size=n_cols, replace=False))
            g = (P[:, k] - Y[:, k]) * w
            h = P[:, k] * (1.0 - P[:, k]) * w
            round_trees.append(grow_newton(d.X, g, h, rows, feats, p["max_depth"], p["reg_lambda"],
                                           p["min_child_weight"], p["min_samples_leaf"], p["learning_rate"]))
        for k, t in enumerate(round_trees):
            F[:, k] += t.predict_value(d.X)[:, 0]
        rounds.append(round_trees)
        losses.append(_weighted_ce(F, d.y, w))
    return TreeEnsembleModel("gbm", rounds, K, dim, p, cfg.seed, base_score=base, train_loss=losses,
                             provenance={"train_ids": list(d.addresses)})


def _weighted_ce(F, y, w):
    P = softmax(F)
    ll = np.log(np.maximum(P[np.arange(len(y)), y], 1e-300))
    return float(-(w * ll).sum() / w.sum())
