import itertools

import numpy as np
import pytest

from stableaml.errors import DegenerateLabels, MissingFeatures, ShapeError
from stableaml.features import FeatureMatrix
from stableaml.gnn import (
    NodePredictor,
    _forward,
    adjacency,
    init_sage,
    loss_and_grads,
    mean_aggregate,
    sage_forward,
    train_sage,
)
from stableaml.graphstore import TransactionGraph, build_graph
from stableaml.learners.common import Standardizer, one_hot, softmax
from stableaml.gnn import SageModel
from factories import addr, check_gradient, log_of

N = [addr(i) for i in range(1, 9)]


def test_mean_aggregate_examples():
    h = {"a": np.array([1.0, 1.0]), "b": np.array([3.0, 3.0])}
    assert mean_aggregate(h, ["a", "b"]).tolist() == [2.0, 2.0]
    assert mean_aggregate(h, []).tolist() == [0.0, 0.0]
    assert np.array_equal(mean_aggregate(h, ["b", "a"]), mean_aggregate(h, ["a", "b"]))
    with pytest.raises(ShapeError):
        mean_aggregate({"a": np.ones(2), "b": np.ones(3)}, ["a", "b"])


def test_mean_aggregate_is_order_free_bitwise():
    rng = np.random.default_rng(0)
    h = {k: rng.normal(size=5) for k in "abcdef"}
    ref = mean_aggregate(h, list("abcdef"))
    for perm in itertools.islice(itertools.permutations("abcdef"), 50):
        assert np.array_equal(mean_aggregate(h, perm), ref)


def test_adjacency_is_row_normalized_without_self_loops():
    g = build_graph(log_of((N[0], N[1], 5), (N[1], N[2], 1), (N[2], N[2], 9), (N[0], N[2], 3)))
    A = adjacency(g).toarray()
    assert np.allclose(A.sum(axis=1), 1.0)
    assert not np.diag(A).any()


def test_adjacency_cap_keeps_heaviest_neighbors():
    hub = N[0]
    g = build_graph(log_of(*[(hub, N[i], i) for i in range(1, 6)]))
    A = adjacency(g, fanout_cap=2).toarray()
    row = A[g.nodes.index(hub)]
    assert {g.nodes[j] for j in np.flatnonzero(row)} == {N[4], N[5]}


def _model(d, hidden=4, seed=0):
    W, b = init_sage(d, hidden, 3, 2, np.random.default_rng(seed))
    std = Standardizer(np.zeros(d), np.ones(d), np.zeros(d, bool))
    return SageModel(W, b, std, 3)


def test_edgeless_graph_reduces_to_a_feed_forward_net():
    g = TransactionGraph(N[:4], {})
    X = np.random.default_rng(1).normal(size=(4, 3))
    m = _model(3)
    W, b = m.weights, m.biases
    h = np.maximum(X @ W[0][:3] + b[0], 0)
    h = np.maximum(h @ W[1][:4] + b[1], 0)
    assert np.allclose(sage_forward(m, g, X), softmax(h @ W[2] + b[2]))


def test_symmetric_pair_gets_identical_outputs():
    g = build_graph(log_of((N[0], N[1], 2), (N[1], N[0], 2)))
    m = _model(2)
    m.weights[0] = np.vstack([np.eye(2, 4), np.eye(2, 4)])
    P = sage_forward(m, g, np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert np.array_equal(P[0], P[1])
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-9)


def test_missing_feature_row():
    g = build_graph(log_of((N[0], N[1], 1)))
    fm = FeatureMatrix([N[0]], np.zeros((1, 68)))
    with pytest.raises(MissingFeatures):
        sage_forward(_model(68), g, fm)


def test_gradient_on_five_node_graph():
    g = build_graph(log_of((N[0], N[1], 1), (N[1], N[2], 4), (N[2], N[3], 2), (N[3], N[4], 7), (N[4], N[0], 3),
                           (N[0], N[2], 5)))
    A = adjacency(g)
    rng = np.random.default_rng(2)
    X = rng.normal(size=(5, 3))
    Y = one_hot(np.array([0, 1, 2, 1, 0]), 3)
    mask = np.array([True, True, False, True, True])
    for _ in range(5):
        W, b = init_sage(3, 6, 3, 2, rng)
        W = [w * 2 for w in W]
        _, gW, gb = loss_and_grads(W, b, A, X, Y, mask)
        err = check_gradient(lambda: loss_and_grads(W, b, A, X, Y, mask)[0], W + b, gW + gb, rng)
        assert err < 1e-4


def _ring(n=12):
    nodes = [addr(100 + i) for i in range(n)]
    g = build_graph(log_of(*[(nodes[i], nodes[(i + 1) % n], 1 + i) for i in range(n)]))
    return g


def test_masked_training_ignores_test_labels():
    g = _ring()
    X = np.random.default_rng(3).normal(size=(12, 4))
    y = np.arange(12) % 3
    mask = np.zeros(12, bool)
    mask[:8] = True
    params = {"epochs": 15, "hidden": 8, "validation_fraction": 0.0}
    a = train_sage(g, X, y, mask, params, seed=1)
    poisoned = y.copy()
    poisoned[~mask] = (poisoned[~mask] + 1) % 3
    b = train_sage(g, X, poisoned, mask, params, seed=1)
    assert all(np.array_equal(u, v) for u, v in zip(a.weights + a.biases, b.weights + b.biases))


def test_training_errors():
    g = _ring(6)
    X = np.zeros((6, 2))
    with pytest.raises(DegenerateLabels):
        train_sage(g, X, np.zeros(6, int), np.zeros(6, bool))
    with pytest.raises(ShapeError):
        train_sage(g, X, np.zeros(6, int), np.ones(5, bool))


def test_training_fits_a_homophilous_ring():
    # labels follow communities; features are weak noisy hints
    blocks = [[addr(200 + 10 * c + i) for i in range(8)] for c in range(3)]
    triples = []
    for c, nodes in enumerate(blocks):
        triples += [(nodes[i], nodes[j], 1) for i in range(8) for j in range(i + 1, 8) if (i + j) % 3 == 0]
    g = build_graph(log_of(*triples))
    y = np.array([next(c for c, b in enumerate(blocks) if n in b) for n in g.nodes])
    rng = np.random.default_rng(4)
    X = one_hot(y, 3) * 0.8 + rng.normal(scale=1.0, size=(len(y), 3))
    mask = np.ones(len(y), bool)
    m = train_sage(g, X, y, mask, {"epochs": 200, "validation_fraction": 0.0, "patience": 200}, seed=0)
    assert np.mean(m.predict_graph(g, X) == y) >= 0.9
    again = train_sage(g, X, y, mask, {"epochs": 200, "validation_fraction": 0.0, "patience": 200}, seed=0)
    assert all(np.array_equal(u, v) for u, v in zip(m.weights, again.weights))


def test_node_predictor_writes_rows_back():
    g = _ring(6)
    X = np.random.default_rng(5).normal(size=(6, 3))
    m = _model(3)
    sub = list(g.nodes[:3])
    np_ = NodePredictor(m, g, X, sub)
    assert np.allclose(np_.predict_proba(X[:3]), sage_forward(m, g, X)[:3])
    changed = X.copy()
    changed[:3] = X[[2, 0, 1]]
    assert np.allclose(np_.predict_proba(X[[2, 0, 1]]), sage_forward(m, g, changed)[:3])
    assert _forward(m.weights, m.biases, adjacency(g), X)[-1].shape == (6, 3)
