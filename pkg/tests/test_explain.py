import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stableaml.errors import NotApplicable, ShapeError
from stableaml.explain import (
    builtin_importance,
    class_signature_matrix,
    consensus_rank,
    model_output,
    permutation_importance,
    shap_importance,
    shap_sample,
    tree_expectation,
    tree_shap,
    write_signatures,
)
from stableaml.learners import Dataset, TrainConfig, Tree, TreeEnsembleModel, train
from shapley import brute_ensemble

NAMES = ["a", "b", "c", "d"]


def _stump():
    # feature 0 at 0.5, leaves predict class 0 / class 1, equal cover
    t = Tree([0, -1, -1], [0.5, 0, 0], [1, -1, -1], [2, -1, -1],
             [[0.5, 0.5], [1.0, 0.0], [0.0, 1.0]], [2.0, 1.0, 1.0], [1.0, 0, 0])
    return TreeEnsembleModel("cart", [t], 2, 3)


def _planted(n=300, d=6, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = (X[:, 2] > 0).astype(int)
    return Dataset(X, y, K=2)


def test_stump_attribution():
    sm = tree_shap(_stump(), np.array([[0.7, 3.0, -1.0]]))
    assert np.allclose(sm.base, [0.5, 0.5])
    assert sm.phi[0, 1, 0] == pytest.approx(0.5)
    assert sm.phi[0, 0, 0] == pytest.approx(-0.5)
    assert not sm.phi[0, :, 1:].any()


def test_tree_expectation_is_cover_weighted():
    assert np.allclose(tree_expectation(_stump().trees[0]), [0.5, 0.5])


@pytest.mark.parametrize("kind,params", [
    ("cart", {"max_depth": 3}),
    ("rf", {"n_estimators": 5, "max_depth": 3, "min_samples_leaf": 1, "min_samples_split": 2}),
    ("gbm", {"n_estimators": 2, "max_depth": 3}),
])
def test_matches_brute_force(kind, params):
    rng = np.random.default_rng(1)
    X = rng.integers(0, 4, size=(200, 4)).astype(float)
    y = ((X[:, 0] + X[:, 1] * X[:, 2]) % 3).astype(int)
    m = train(Dataset(X, y), TrainConfig(kind, params, seed=2))
    sm = tree_shap(m, X[:15])
    for i, x in enumerate(X[:15]):
        assert np.abs(sm.phi[i] - brute_ensemble(m, x)).max() < 1e-9


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["rf", "gbm"]))
def test_local_accuracy(seed, kind):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(120, 5))
    y = np.minimum((X[:, 0] > 0) + (X[:, 1] * X[:, 3] > 0.5), 2).astype(int)
    m = train(Dataset(X, y), TrainConfig(kind, {"n_estimators": 8}, seed=seed))
    sm = tree_shap(m, X)
    assert np.abs(sm.output() - model_output(m, X)).max() < 1e-6
    assert sm.scale == ("logit" if kind == "gbm" else "probability")


def test_non_tree_models_are_not_applicable():
    d = _planted()
    lr = train(d, TrainConfig("logreg"))
    with pytest.raises(NotApplicable):
        tree_shap(lr, d.X)
    mlp = train(d, TrainConfig("mlp", {"epochs": 1}))
    with pytest.raises(NotApplicable):
        builtin_importance(mlp)
    with pytest.raises(NotApplicable):
        class_signature_matrix(mlp, d.X, d.y, K=2)


def test_builtin_importance_contract():
    d = _planted()
    stump = train(d, TrainConfig("cart", {"max_depth": 1}))
    s = builtin_importance(stump)
    assert s[2] == 1.0 and s.sum() == pytest.approx(1.0)
    for kind in ("rf", "gbm", "logreg"):
        s = builtin_importance(train(d, TrainConfig(kind, {"n_estimators": 10} if kind != "logreg" else {})))
        assert s.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.argmax(s) == 2


def test_permutation_importance_examples():
    d = _planted()
    X = d.X.copy()
    X[:, 4] = 1.0
    m = train(Dataset(X, d.y, K=2), TrainConfig("cart", {"max_depth": 1}))
    drops = permutation_importance(m, X, d.y, repeats=5, seed=1)
    assert drops[2] > 0.3
    assert drops[4] == 0.0
    identity = permutation_importance(m, X, d.y, repeats=3, permuter=lambda j, r, n: np.arange(n))
    assert not identity.any()


def test_unused_features_have_no_permutation_drop():
    d = _planted(seed=3)
    m = train(d, TrainConfig("gbm", {"n_estimators": 10, "max_depth": 2}))
    unused = builtin_importance(m) == 0
    drops = permutation_importance(m, d.X, d.y, repeats=3)
    assert unused.any() and np.all(np.abs(drops[unused]) <= 1e-12)


def test_consensus_examples():
    t = consensus_rank({"x": [3.0, 2.0, 1.0], "y": [1.0, 3.0, 2.0]}, ["A", "B", "C"])
    assert t.avg_rank.tolist() == [2.0, 1.5, 2.5]
    assert [t.feature_names[j] for j in t.order()] == ["B", "A", "C"]
    single = consensus_rank({"x": [0.1, 0.9, 0.5]}, ["A", "B", "C"])
    assert single.consensus.tolist() == [3, 1, 2]


def test_consensus_ties_use_catalog_order_and_fractional_ranks():
    t = consensus_rank({"x": [1.0, 1.0, 0.0]}, ["A", "B", "C"])
    assert t.ranks["x"].tolist() == [1.5, 1.5, 3.0]
    assert t.consensus.tolist() == [1, 2, 3]


def test_consensus_errors():
    with pytest.raises(ShapeError):
        consensus_rank({"x": [1.0, 2.0]})
    with pytest.raises(ValueError):
        consensus_rank({})
    with pytest.raises(ValueError):
        consensus_rank({"x": [np.nan, 1, 2]}, ["A", "B", "C"])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_consensus_is_monotone_invariant(seed):
    rng = np.random.default_rng(seed)
    cols = {f"m{i}": rng.integers(0, 5, 68).astype(float) for i in range(3)}
    base = consensus_rank(cols)
    assert sorted(base.consensus.tolist()) == list(range(1, 69))
    for name in cols:
        warped = dict(cols)
        warped[name] = np.exp(cols[name]) * 10 + 3
        assert np.array_equal(consensus_rank(warped).consensus, base.consensus)


def test_importance_csv_layout():
    t = consensus_rank({"rf_builtin": [0.2, 0.8], "gbm_shap": [0.5, 0.1]}, ["f", "g"])
    buf = io.StringIO()
    t.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "feature,rf_builtin,gbm_shap,avg_rank,consensus_rank"
    assert lines[1].endswith(",1") or lines[2].endswith(",1")


def test_signature_matrix():
    d = _planted()
    m = train(d, TrainConfig("rf", {"n_estimators": 10}))
    S = class_signature_matrix(m, d.X, d.y, K=2)
    assert S.shape == (6, 2)
    assert np.allclose(S.sum(axis=0), 1.0, atol=1e-9)
    one = train(Dataset(d.X[:, 2:3], d.y, K=2), TrainConfig("gbm", {"n_estimators": 5}))
    assert np.allclose(class_signature_matrix([one, one], d.X[:, 2:3], d.y, K=2), 1.0)
    buf = io.StringIO()
    write_signatures(S, buf, feature_names=list("uvwxyz"), class_names=("normal", "suspicious"))
    assert buf.getvalue().startswith("feature,normal,suspicious\n")


def test_shap_sample_and_importance():
    assert shap_sample(10, size=3000).tolist() == list(range(10))
    idx = shap_sample(5000, size=3000, seed=4)
    assert len(idx) == 3000 and np.all(np.diff(idx) > 0)
    assert np.array_equal(idx, shap_sample(5000, size=3000, seed=4))
    d = _planted()
    s = shap_importance(train(d, TrainConfig("gbm", {"n_estimators": 5})), d.X[:50])
    assert np.argmax(s) == 2
