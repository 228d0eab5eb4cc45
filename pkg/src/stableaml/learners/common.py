"""Shared numerics, dataset container and training configuration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateLabels, NumericError, ShapeError

LOG_CLAMP = 1e-12

# Default hyperparameters per learner; the booster uses tuned gradient-boosting values.
DEFAULTS = {
    "logreg": {"C": 10.0, "penalty": "l1", "max_iter": 5000, "tol": 1e-7, "class_weight": None},
    "cart": {"max_depth": None, "min_samples_split": 2, "min_samples_leaf": 1, "max_features": None,
             "class_weight": None},
    "rf": {"n_estimators": 400, "max_depth": None, "min_samples_split": 5, "min_samples_leaf": 2,
           "max_features": "sqrt", "bootstrap": True, "class_weight": None},
    "gbm": {"n_estimators": 200, "learning_rate": 0.1, "max_depth": 9, "subsample": 0.8,
            "colsample": 0.8, "reg_lambda": 1.0, "min_child_weight": 1.0, "min_samples_leaf": 1,
            "class_weight": None},
    "mlp": {"hidden": (128, 64), "dropout": 0.2, "learning_rate": 1e-3, "epochs": 200,
            "batch_size": 256, "patience": 10, "validation_fraction": 0.1, "class_weight": None},
}


def softmax(z):
    """Row-wise softmax with max subtraction. Accepts a vector or a matrix."""
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise NumericError("softmax input contains non-finite values")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs, y, weights=None) -> float:
    """Mean negative log-likelihood of integer labels ``y``; logs clamped at 1e-12."""
    probs = np.asarray(probs, dtype=float)
    y = np.asarray(y)
    if probs.ndim != 2 or probs.shape[0] != y.shape[0]:
        raise ShapeError(f"probs {probs.shape} incompatible with labels {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= probs.shape[1]):
        raise ShapeError("label outside the probability columns")
    ll = np.log(np.maximum(probs[np.arange(len(y)), y], LOG_CLAMP))
    if weights is None:
        return float(-ll.mean())
    w = np.asarray(weights, dtype=float)
    return float(-(w * ll).sum() / w.sum())


def one_hot(y, k):
    out = np.zeros((len(y), k))
    out[np.arange(len(y)), y] = 1.0
    return out


def argmax_lowest(probs):
    """Row-wise argmax; ``np.argmax`` already returns the first (lowest) index on ties."""
    return np.argmax(np.asarray(probs), axis=1)


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    addresses: list = field(default_factory=list)
    K: int = 3

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ShapeError(f"X {self.X.shape} and y {self.y.shape} disagree")
        if not self.addresses:
            self.addresses = [str(i) for i in range(len(self.y))]
        if len(self.addresses) != len(self.y):
            raise ShapeError("addresses and labels disagree in length")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.K):
            raise ShapeError(f"labels must lie in [0, {self.K})")

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], [self.addresses[i] for i in idx], self.K)


@dataclass
class TrainConfig:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DEFAULTS:
            raise ValueError(f"unknown model kind {self.kind!r}; choose from {sorted(DEFAULTS)}")
        unknown = set(self.params) - set(DEFAULTS[self.kind])
        if unknown:
            raise ValueError(f"unknown hyperparameters for {self.kind}: {sorted(unknown)}")

    def resolved(self) -> dict:
        return {**DEFAULTS[self.kind], **self.params}

    def with_params(self, **kw) -> "TrainConfig":
        return TrainConfig(self.kind, {**self.params, **kw}, self.seed)


class Standardizer:
    """Per-feature z-scoring fitted on training rows; constant columns map to 0."""

    def __init__(self, mean, scale, constant):
        self.mean = np.asarray(mean, dtype=float)
        self.scale = np.asarray(scale, dtype=float)
        self.constant = np.asarray(constant, dtype=bool)

    @classmethod
    def fit(cls, X):
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        constant = ~(std > 0)
        return cls(mean, np.where(constant, 1.0, std), constant)

    def transform(self, X):
        Z = (np.asarray(X, dtype=float) - self.mean) / self.scale
        Z[:, self.constant] = 0.0
        return Z

    def to_dict(self):
        return {"mean": self.mean, "scale": self.scale, "constant": self.constant}

    @classmethod
    def from_dict(cls, d):
        return cls(d["mean"], d["scale"], d["constant"])


def sample_weights(y, K, class_weight):
    """Per-row weights: None -> ones, "balanced" -> n/(K*n_c), dict -> lookup."""
    y = np.asarray(y)
    if class_weight is None:
        return np.ones(len(y))
    if class_weight == "balanced":
        counts = np.bincount(y, minlength=K).astype(float)
        w = np.where(counts > 0, len(y) / (K * np.maximum(counts, 1)), 0.0)
        return w[y]
    return np.array([float(class_weight.get(int(c), class_weight.get(str(int(c)), 1.0))) for c in y])


def check_labels(d: Dataset, min_classes=2):
    present = np.unique(d.y)
    if len(present) < min_classes:
        raise DegenerateLabels(f"training labels contain only {present.tolist()}")


def resolve_max_features(spec, d):
    if spec is None:
        return d
    if spec == "sqrt":
        return max(1, math.ceil(math.sqrt(d)))
    if spec == "log2":
        return max(1, math.ceil(math.log2(d)))
    if isinstance(spec, float):
        return max(1, min(d, int(math.ceil(spec * d))))
    return max(1, min(d, int(spec)))


def derived_rng(seed, *stream):
    """Independent Philox generator for a (seed, stream...) tuple."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed) & (2**63 - 1), *map(int, stream)])))
