"""From-scratch tabular classifiers sharing one train/predict/serialize contract."""

import numpy as np

from .common import DEFAULTS, Dataset, Standardizer, TrainConfig, cross_entropy, softmax
from .linear import LinearModel, train_logreg
from .mlp import MlpModel, train_mlp
from .trees import Tree, TreeEnsembleModel, train_gbm, train_random_forest, train_tree
from .grid import CvResult, expand_grid, grid_search_cv
from .serialize import EXTENSION, dump_model, dumps_model, load_model, loads_model, save_model

_TRAINERS = {
    "logreg": train_logreg,
    "cart": train_tree,
    "rf": train_random_forest,
    "gbm": train_gbm,
    "mlp": train_mlp,
}


def train(d: Dataset, cfg: TrainConfig):
    return _TRAINERS[cfg.kind](d, cfg)


def predict_proba(model, X):
    return model.predict_proba(X)


def predict(model, X):
    return np.argmax(model.predict_proba(X), axis=1)


__all__ = [
    "CvResult", "EXTENSION", "dump_model", "dumps_model", "expand_grid", "grid_search_cv", "load_model",
    "loads_model", "save_model",
    "DEFAULTS", "Dataset", "LinearModel", "MlpModel", "Standardizer", "TrainConfig", "Tree",
    "TreeEnsembleModel", "cross_entropy", "predict", "predict_proba", "softmax", "train",
    "train_gbm", "train_logreg", "train_mlp", "train_random_forest", "train_tree",
]
