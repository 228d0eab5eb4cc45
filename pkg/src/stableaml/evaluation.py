"""Splitting, classification metrics, binary collapse and report assembly."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import LeakageError, ShapeError, StratifyError, Undefined
from .ingest import CLASS_NAMES

BINARY_NAMES = ("normal", "suspicious")


@dataclass(frozen=True)
class SplitSpec:
    ratio: float = 0.8
    seed: int = 42
    stratified: bool = True

    def __post_init__(self):
        if not 0 < self.ratio < 1:
            raise ValueError("split ratio must lie strictly between 0 and 1")


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def stratified_split(labels, spec: SplitSpec = SplitSpec()):
    """Disjoint, covering (train, test) index arrays, each sorted ascending.

    Stratified: per class, ``round(n_c * ratio)`` rows (half rounds up),
    clamped to ``[1, n_c - 1]``, go to training after a seeded shuffle.
    """
    y = np.asarray(labels)
    rng = np.random.Generator(np.random.Philox(spec.seed))
    train = []
    if spec.stratified:
        for c in np.unique(y):
            idx = np.flatnonzero(y == c)
            if len(idx) < 2:
                raise StratifyError(f"class {c} has {len(idx)} member(s); stratification needs >= 2")
            n_train = min(max(_round_half_up(len(idx) * spec.ratio), 1), len(idx) - 1)
            train.extend(idx[rng.permutation(len(idx))][:n_train].tolist())
    else:
        n_train = _round_half_up(len(y) * spec.ratio)
        train = rng.permutation(len(y))[:n_train].tolist()
    train = np.array(sorted(train), dtype=np.int64)
    test = np.setdiff1d(np.arange(len(y)), train)
    return train, test


def stratified_kfold(labels, k=5, seed=0):
    """Per class, shuffle and deal rows round-robin into ``k`` folds."""
    from .errors import FoldError

    y = np.asarray(labels)
    folds = [[] for _ in range(k)]
    rng = np.random.Generator(np.random.Philox(seed))
    offset = 0
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        if len(idx) < k:
            raise FoldError(f"class {c} has {len(idx)} rows, fewer than k={k}")
        idx = idx[rng.permutation(len(idx))]
        for j, row in enumerate(idx):
            folds[(j + offset) % k].append(int(row))
        offset += len(idx)
    return [np.array(sorted(f), dtype=np.int64) for f in folds]


def binary_collapse(labels):
    y = np.asarray(labels)
    if y.size and (y.min() < 0 or y.max() > 2):
        raise ValueError("labels must lie in {0, 1, 2}")
    return (y > 0).astype(np.int64)


def _check_pair(y_true, y_pred):
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ShapeError("y_true and y_pred differ in length")
    if y_true.size == 0:
        raise ValueError("metrics need at least one sample")
    return y_true, y_pred


def per_class_metrics(y_true, y_pred, K=None):
    """Precision/recall/F1/support per class; undefined ratios are 0 and flagged."""
    y_true, y_pred = _check_pair(y_true, y_pred)
    K = K or int(max(y_true.max(), y_pred.max()) + 1)
    rows = []
    for k in range(K):
        tp = int(np.sum((y_pred == k) & (y_true == k)))
        fp = int(np.sum((y_pred == k) & (y_true != k)))
        fn = int(np.sum((y_pred != k) & (y_true == k)))
        flags = []
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        if tp + fp == 0:
            flags.append("precision_undefined")
        if tp + fn == 0:
            flags.append("recall_undefined")
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        rows.append({"class": k, "precision": prec, "recall": rec, "f1": f1,
                     "support": tp + fn, "zero_division": flags})
    return rows


def macro_f1(y_true, y_pred, K=None) -> float:
    rows = per_class_metrics(y_true, y_pred, K)
    return float(np.mean([r["f1"] for r in rows]))


def macro_mean(values) -> float:
    return float(np.mean(values))


def ovr_auroc(y_true, scores, class_k) -> float:
    """One-vs-rest AUROC via the Mann-Whitney midrank statistic."""
    from scipy.stats import rankdata

    y = np.asarray(y_true) == class_k
    s = np.asarray(scores, dtype=float)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise Undefined(f"class {class_k} is absent from (or the only class in) y_true")
    ranks = rankdata(s, method="average")
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


@dataclass
class MetricsReport:
    per_class: list
    accuracy: float
    macro_f1: float
    macro_recall: float
    macro_precision: float
    macro_auroc: float | None
    n_test: int
    class_names: tuple = CLASS_NAMES
    model: dict = field(default_factory=dict)
    binary: "MetricsReport | None" = None

    def as_dict(self):
        out = {
            "model": self.model,
            "n_test": self.n_test,
            "class_names": list(self.class_names),
            "per_class": self.per_class,
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "macro_auroc": self.macro_auroc,
        }
        if self.binary is not None:
            out["binary"] = self.binary.as_dict()
        return out

    def to_json(self):
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"


def metrics_report(y_true, probs, K, class_names=CLASS_NAMES, model=None) -> MetricsReport:
    probs = np.asarray(probs, dtype=float)
    y_true = np.asarray(y_true)
    y_pred = np.argmax(probs, axis=1)
    rows = per_class_metrics(y_true, y_pred, K)
    aucs = []
    for r in rows:
        try:
            r["auroc"] = ovr_auroc(y_true, probs[:, r["class"]], r["class"])
            aucs.append(r["auroc"])
        except Undefined:
            r["auroc"] = None
        r["name"] = class_names[r["class"]]
    return MetricsReport(
        per_class=rows,
        accuracy=float(np.mean(y_true == y_pred)),
        macro_f1=macro_mean([r["f1"] for r in rows]),
        macro_recall=macro_mean([r["recall"] for r in rows]),
        macro_precision=macro_mean([r["precision"] for r in rows]),
        macro_auroc=macro_mean(aucs) if len(aucs) == len(rows) else None,
        n_test=len(y_true),
        class_names=tuple(class_names),
        model=dict(model or {}),
    )


def collapse_probs(probs):
    probs = np.asarray(probs, dtype=float)
    return np.column_stack([probs[:, 0], probs[:, 1:].sum(axis=1)])


def config_hash(model) -> str:
    blob = json.dumps({"kind": model.kind, "params": _jsonable(getattr(model, "params", {})),
                       "seed": getattr(model, "seed", None)}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _jsonable(d):
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


def evaluate(model, dataset, split_or_test, binary=False) -> MetricsReport:
    """Score ``model`` on the held-out rows of ``dataset``.

    ``split_or_test`` is either a (train, test) index pair or the test index
    array. Raises ``LeakageError`` if any test row was used for training.
    """
    test = split_or_test[1] if isinstance(split_or_test, tuple) else split_or_test
    test = np.asarray(test, dtype=np.int64)
    trained_on = set(getattr(model, "provenance", {}).get("train_ids", ()))
    overlap = [dataset.addresses[i] for i in test if dataset.addresses[i] in trained_on]
    if overlap:
        raise LeakageError(f"{len(overlap)} test rows were part of the training set (e.g. {overlap[0]})")
    X, y = dataset.X[test], dataset.y[test]
    probs = model.predict_proba(X)
    info = {"kind": model.kind, "config_hash": config_hash(model)}
    if dataset.K == 2:
        return metrics_report(y, probs, 2, BINARY_NAMES, info)
    report = metrics_report(y, probs, dataset.K, CLASS_NAMES, info)
    if binary:
        report.binary = metrics_report(binary_collapse(y), collapse_probs(probs), 2, BINARY_NAMES, info)
    return report


def render_table(report: MetricsReport, title="") -> str:
    """Aligned text table: per-class rows, then the macro summary."""
    lines = []
    if title:
        lines.append(title)
    lines.append(f"{'class':<12} {'AUROC':>7} {'Prec':>7} {'Recall':>7} {'F1':>7} {'Support':>8}")
    for r in report.per_class:
        auc = f"{r['auroc']:.4f}" if r.get("auroc") is not None else "   n/a"
        lines.append(f"{r['name']:<12} {auc:>7} {r['precision']:>7.4f} {r['recall']:>7.4f} "
                     f"{r['f1']:>7.4f} {r['support']:>8d}")
    auc = f"{report.macro_auroc:.4f}" if report.macro_auroc is not None else "n/a"
    lines.append(f"macro: AUROC {auc}  Acc {report.accuracy:.4f}  F1 {report.macro_f1:.4f}  "
                 f"Recall {report.macro_recall:.4f}")
    if report.binary is not None:
        lines.append("")
        lines.append(render_table(report.binary, "binary (normal vs suspicious)"))
    return "\n".join(lines)
