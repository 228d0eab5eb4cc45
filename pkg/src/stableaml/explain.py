"""Feature importance: built-in scores, permutation drops, exact TreeSHAP, consensus ranks."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.stats import rankdata

from .errors import NotApplicable, ShapeError
from .features import FEATURE_NAMES
from .ingest import CLASS_NAMES
from .learners.common import derived_rng

TREE_KINDS = ("cart", "rf", "gbm")


def builtin_importance(model) -> np.ndarray:
    """Normalized split-gain totals for trees, normalized mean |coefficient| for LR."""
    if model.kind in TREE_KINDS:
        scores = np.zeros(model.n_features)
        for t, _ in model.iter_trees():
            inner = t.feature >= 0
            np.add.at(scores, t.feature[inner], t.gain[inner])
    elif model.kind == "logreg":
        scores = np.abs(model.B).mean(axis=0)
    else:
        raise NotApplicable(f"no built-in importance for model kind {model.kind!r}")
    total = scores.sum()
    return scores / total if total > 0 else scores


def permutation_importance(model, X, y, repeats=10, seed=0, permuter=None, K=None) -> np.ndarray:
    """Mean macro-F1 drop when one column is shuffled, per feature.

    ``permuter(feature, repeat, n)`` may supply the row order; by default it
    is a seeded permutation drawn per (feature, repeat).
    """
    from .evaluation import macro_f1

    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    K = K or getattr(model, "K", None)
    base = macro_f1(y, model.predict(X), K)
    drops = np.zeros(X.shape[1])
    for j in range(X.shape[1]):
        total = 0.0
        for r in range(repeats):
            order = permuter(j, r, len(X)) if permuter else derived_rng(seed, j, r).permutation(len(X))
            Xp = X.copy()
            Xp[:, j] = X[order, j]
            total += base - macro_f1(y, model.predict(Xp), K)
        drops[j] = total / repeats
    return drops


# Path-dependent TreeSHAP. The path for recursion depth ``depth`` lives in a
# private slice of the four flat buffers starting at ``off``; children copy the
# parent's slice to the next free offset before extending it.

@numba.njit
def _extend(pf, pz, po, pw, off, depth, zero, one, feat):
    pf[off + depth] = feat
    pz[off + depth] = zero
    po[off + depth] = one
    pw[off + depth] = 1.0 if depth == 0 else 0.0
    for i in range(depth - 1, -1, -1):
        pw[off + i + 1] += one * pw[off + i] * (i + 1) / (depth + 1)
        pw[off + i] = zero * pw[off + i] * (depth - i) / (depth + 1)


@numba.njit
def _unwind(pf, pz, po, pw, off, depth, k):
    one = po[off + k]
    zero = pz[off + k]
    nxt = pw[off + depth]
    for i in range(depth - 1, -1, -1):
        if one != 0.0:
            tmp = pw[off + i]
            pw[off + i] = nxt * (depth + 1) / ((i + 1) * one)
            nxt = tmp - pw[off + i] * zero * (depth - i) / (depth + 1)
        else:
            pw[off + i] = pw[off + i] * (depth + 1) / (zero * (depth - i))
    for i in range(k, depth):
        pf[off + i] = pf[off + i + 1]
        pz[off + i] = pz[off + i + 1]
        po[off + i] = po[off + i + 1]


@numba.njit
def _unwound_sum(pz, po, pw, off, depth, k):
    one = po[off + k]
    zero = pz[off + k]
    nxt = pw[off + depth]
    total = 0.0
    for i in range(depth - 1, -1, -1):
        if one != 0.0:
            tmp = nxt * (depth + 1) / ((i + 1) * one)
            total += tmp
            nxt = pw[off + i] - tmp * zero * (depth - i) / (depth + 1)
        else:
            total += pw[off + i] / zero * (depth + 1) / (depth - i)
    return total


@numba.njit
def _recurse(node, feature, threshold, left, right, value, cover, x, phi,
             pf, pz, po, pw, off, depth, zero, one, feat):
    # copy the parent's path into this level's slice
    new_off = off + depth + 1 if depth > 0 else off
    if depth > 0:
        for i in range(depth):
            pf[new_off + i] = pf[off + i]
            pz[new_off + i] = pz[off + i]
            po[new_off + i] = po[off + i]
            pw[new_off + i] = pw[off + i]
    _extend(pf, pz, po, pw, new_off, depth, zero, one, feat)
    f = feature[node]
    if f < 0:
        for i in range(1, depth + 1):
            w = _unwound_sum(pz, po, pw, new_off, depth, i)
            scale = w * (po[new_off + i] - pz[new_off + i])
            for c in range(value.shape[1]):
                phi[pf[new_off + i], c] += scale * value[node, c]
        return
    if x[f] <= threshold[node]:
        hot, cold = left[node], right[node]
    else:
        hot, cold = right[node], left[node]
    inc_zero = 1.0
    inc_one = 1.0
    k = 0
    while k <= depth:
        if pf[new_off + k] == f:
            break
        k += 1
    if k != depth + 1:
        inc_zero = pz[new_off + k]
        inc_one = po[new_off + k]
        _unwind(pf, pz, po, pw, new_off, depth, k)
        depth -= 1
    _recurse(hot, feature, threshold, left, right, value, cover, x, phi,
             pf, pz, po, pw, new_off, depth + 1, cover[hot] / cover[node] * inc_zero, inc_one, f)
    _recurse(cold, feature, threshold, left, right, value, cover, x, phi,
             pf, pz, po, pw, new_off, depth + 1, cover[cold] / cover[node] * inc_zero, 0.0, f)


@numba.njit
def _tree_shap_rows(feature, threshold, left, right, value, cover, X, max_depth, out):
    """Adds each row's attributions to ``out`` (n x d x width)."""
    size = (max_depth + 2) * (max_depth + 3) // 2 + 1
    pf = np.zeros(size, dtype=np.int64)
    pz = np.zeros(size)
    po = np.zeros(size)
    pw = np.zeros(size)
    for r in range(X.shape[0]):
        _recurse(0, feature, threshold, left, right, value, cover, X[r], out[r],
                 pf, pz, po, pw, 0, 0, 1.0, 1.0, -1)


def tree_expectation(t) -> np.ndarray:
    """Cover-weighted mean leaf value (the attribution baseline of one tree)."""
    leaves = t.feature < 0
    return (t.value[leaves] * t.cover[leaves, None]).sum(axis=0) / t.cover[0]


def _single_tree_shap(t, X):
    d = X.shape[1]
    out = np.zeros((X.shape[0], d, t.value.shape[1]))
    _tree_shap_rows(t.feature, t.threshold, t.left, t.right, t.value, t.cover,
                    np.ascontiguousarray(X, dtype=float), t.depth, out)
    return out


@dataclass
class ShapMatrix:
    """``phi[i, k, j]``: attribution of feature j to class-k output of row i."""

    phi: np.ndarray
    base: np.ndarray
    scale: str  # "probability" or "logit"

    def output(self):
        return self.phi.sum(axis=2) + self.base


def tree_shap(model, X) -> ShapMatrix:
    """Exact path-dependent tree Shapley values.

    Forests are explained on the averaged-probability scale, boosted models on
    the per-class logit scale (base value includes the prior log-odds).
    """
    if getattr(model, "kind", None) not in TREE_KINDS:
        raise NotApplicable(f"TreeSHAP needs a tree ensemble, got {getattr(model, 'kind', type(model).__name__)!r}")
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    K = model.K
    phi = np.zeros((n, d, K))
    if model.kind == "gbm":
        base = np.array(model.base_score, dtype=float)
        for t, k in model.iter_trees():
            phi[:, :, k] += _single_tree_shap(t, X)[:, :, 0]
            base[k] += tree_expectation(t)[0]
        return ShapMatrix(np.transpose(phi, (0, 2, 1)), base, "logit")
    base = np.zeros(K)
    for t, _ in model.iter_trees():
        phi += _single_tree_shap(t, X)
        base += tree_expectation(t)
    m = len(model.trees)
    return ShapMatrix(np.transpose(phi / m, (0, 2, 1)), base / m, "probability")


def model_output(model, X):
    """The quantity TreeSHAP decomposes: probabilities for forests, logits for GBM."""
    if model.kind == "gbm":
        return model.decision_function(np.asarray(X, dtype=float))
    return model.predict_proba(X)


def shap_importance(model, X) -> np.ndarray:
    """Mean |phi| over rows and classes."""
    return np.abs(tree_shap(model, X).phi).mean(axis=(0, 1))


def shap_sample(n, size=3000, seed=0):
    """Sorted row indices of a seeded subsample of at most ``size`` rows."""
    if n <= size:
        return np.arange(n)
    return np.sort(derived_rng(seed, 7).choice(n, size=size, replace=False))


@dataclass
class ImportanceTable:
    feature_names: list
    columns: dict  # name -> raw scores
    ranks: dict = field(default_factory=dict)  # name -> fractional ranks
    avg_rank: np.ndarray | None = None
    consensus: np.ndarray | None = None

    def order(self):
        """Feature indices by consensus rank."""
        return np.argsort(self.consensus, kind="stable")

    def top(self, n=15):
        return [(int(self.consensus[j]), self.feature_names[j], float(self.avg_rank[j]))
                for j in self.order()[:n]]

    def write_csv(self, sink):
        w = csv.writer(sink, lineterminator="\n")
        names = list(self.columns)
        w.writerow(["feature", *names, "avg_rank", "consensus_rank"])
        for j, f in enumerate(self.feature_names):
            w.writerow([f, *(repr(float(self.columns[c][j])) for c in names),
                        repr(float(self.avg_rank[j])), int(self.consensus[j])])


def consensus_rank(columns, feature_names=None) -> ImportanceTable:
    """Average descending fractional ranks across columns, then re-rank.

    ``columns`` maps a column name (for example ``gbm_shap``) to raw scores.
    Equal mean ranks are ordered by catalog position.
    """
    names = list(feature_names or FEATURE_NAMES)
    cols = dict(columns) if isinstance(columns, dict) else {f"m{i}": c for i, c in enumerate(columns)}
    if not cols:
        raise ValueError("consensus needs at least one column")
    ranks = {}
    for name, scores in cols.items():
        s = np.asarray(scores, dtype=float)
        if s.shape != (len(names),):
            raise ShapeError(f"column {name!r} has {s.size} scores, expected {len(names)}")
        if not np.all(np.isfinite(s)):
            raise ValueError(f"column {name!r} contains non-finite scores")
        ranks[name] = rankdata(-s, method="average")
    avg = np.mean(np.vstack(list(ranks.values())), axis=0)
    order = np.lexsort((np.arange(len(names)), avg))
    consensus = np.empty(len(names), dtype=np.int64)
    consensus[order] = np.arange(1, len(names) + 1)
    return ImportanceTable(names, {k: np.asarray(v, dtype=float) for k, v in cols.items()}, ranks, avg, consensus)


def class_signature_matrix(models, X, y, K=3) -> np.ndarray:
    """Mean |SHAP| of the class-k output over rows labeled k, normalized per class.

    Accepts one tree model or a list; matrices are averaged across models.
    Returns an (n_features x K) array whose columns sum to one.
    """
    models = models if isinstance(models, (list, tuple)) else [models]
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    acc = np.zeros((X.shape[1], K))
    for m in models:
        sm = tree_shap(m, X)
        for k in range(K):
            rows = y == k if np.any(y == k) else np.ones(len(y), dtype=bool)
            col = np.abs(sm.phi[rows, k, :]).mean(axis=0)
            total = col.sum()
            acc[:, k] += col / total if total > 0 else col
    return acc / len(models)


def write_signatures(matrix, sink, feature_names=None, class_names=CLASS_NAMES):
    names = list(feature_names or FEATURE_NAMES)
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(["feature", *class_names])
    for j, f in enumerate(names):
        w.writerow([f, *(repr(float(v)) for v in matrix[j])])
