"""Exhaustive hyperparameter search with stratified k-fold cross-validation."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .common import Dataset, TrainConfig


@dataclass
class CvResult:
    best: TrainConfig
    model: object
    table: list  # one dict per configuration: params, fold scores, mean


def expand_grid(grid: dict) -> list[dict]:
    """Cartesian product in key-insertion order, last key varying fastest."""
    if not grid:
        return [{}]
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def grid_search_cv(d: Dataset, kind: str, grid, k=5, metric=None, seed=0) -> CvResult:
    """Mean ``metric`` over stratified folds per configuration; ties keep the earlier one.

    ``grid`` is a dict of value lists or an explicit list of param dicts. The
    winning configuration is refit on all of ``d``.
    """
    from ..evaluation import macro_f1, stratified_kfold
    from . import train

    metric = metric or (lambda yt, yp: macro_f1(yt, yp, d.K))
    configs = list(grid) if isinstance(grid, list) else expand_grid(grid)
    if not configs:
        raise ValueError("grid is empty")
    folds = stratified_kfold(d.y, k, seed)
    table = []
    best_i, best_score = 0, -np.inf
    for i, params in enumerate(configs):
        cfg = TrainConfig(kind, dict(params), seed)
        scores = []
        for f, test in enumerate(folds):
            train_idx = np.setdiff1d(np.arange(len(d)), test)
            m = train(d.subset(train_idx), cfg)
            scores.append(float(metric(d.y[test], m.predict(d.X[test]))))
        mean = float(np.mean(scores))
        table.append({"params": dict(params), "fold_scores": scores, "mean": mean})
        if mean > best_score:
            best_i, best_score = i, mean
    best = TrainConfig(kind, dict(configs[best_i]), seed)
    return CvResult(best=best, model=train(d, best), table=table)
