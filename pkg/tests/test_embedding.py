"""State encoder: message passing, graph pooling, label encoding.

The recursion oracle unrolls the update rule node by node in plain
python, independent of the vectorized implementation.
"""

from __future__ import annotations

import numpy as np
import pytest

from graphpoison import embedding as emb
from graphpoison.errors import GraphValidationError
from graphpoison.graph import adjacency_csr
from graphpoison.numerics import finite_diff_check
from graphpoison.rng import derive_rng
from conftest import small_graph


def make_params(feat_dim, num_labels, dim=4, label_hidden=3, rounds=2, seed=0):
    return emb.EmbeddingParams.create(
        feat_dim, num_labels, dim=dim, label_hidden=label_hidden, rounds=rounds, seed=seed
    )


def view_of(g, extra=None):
    return emb.GraphView(
        num_nodes=g.num_nodes,
        base_adj=adjacency_csr(g.num_nodes, g.edge_array),
        features=g.features,
        extra_edges=np.asarray(extra, dtype=np.int64).reshape(-1, 2)
        if extra is not None
        else np.zeros((0, 2), dtype=np.int64),
    )


def oracle_embed(g, ep, extra=None):
    """Per-node unrolled recursion: mu0 = 0, mu_{k+1} = relu(W_l x + W_a sum)."""
    lift, agg = ep.params[emb.LIFT], ep.params[emb.AGG]
    neigh = {i: [] for i in range(g.num_nodes)}
    edges = list(g.edges) + [tuple(e) for e in (extra or [])]
    for u, v in edges:
        neigh[u].append(v)
        neigh[v].append(u)
    mu = {i: np.zeros(ep.dim) for i in range(g.num_nodes)}
    for _ in range(ep.rounds):
        nxt = {}
        for v in range(g.num_nodes):
            s = np.zeros(ep.dim)
            for u in neigh[v]:
                s = s + mu[u]
            nxt[v] = np.maximum(g.features[v] @ lift + s @ agg, 0.0)
        mu = nxt
    return np.stack([mu[i] for i in range(g.num_nodes)])


class TestEmbedNodes:
    def test_single_round_isolated_node(self):
        g = small_graph([], n=1, num_labels=2, feat_dim=3)
        ep = make_params(3, 2, rounds=1, seed=1)
        out = emb.embed_nodes(view_of(g), ep)
        expect = np.maximum(g.features @ ep.params[emb.LIFT], 0.0)
        assert np.abs(out - expect).max() <= 1e-15

    def test_zero_weights_zero_embeddings(self):
        g = small_graph([(0, 1), (1, 2)], n=3)
        ep = make_params(3, 2)
        ep.params[emb.LIFT][...] = 0.0
        ep.params[emb.AGG][...] = 0.0
        assert np.all(emb.embed_nodes(view_of(g), ep) == 0.0)

    def test_matches_unrolled_oracle(self):
        g = small_graph([(0, 1), (1, 2), (2, 3), (3, 4), (0, 5)], n=6, feat_dim=3, seed=2)
        ep = make_params(3, 2, rounds=2, seed=3)
        out = emb.embed_nodes(view_of(g), ep)
        assert np.abs(out - oracle_embed(g, ep)).max() <= 1e-12

    def test_extra_edges_match_oracle(self):
        g = small_graph([(0, 1), (2, 3)], n=5, feat_dim=3, seed=4)
        extra = [(0, 4), (1, 4)]
        ep = make_params(3, 2, rounds=3, seed=5)
        out = emb.embed_nodes(view_of(g, extra), ep)
        assert np.abs(out - oracle_embed(g, ep, extra)).max() <= 1e-12

    def test_permutation_equivariance(self):
        g = small_graph([(0, 1), (1, 2), (2, 3), (0, 4)], n=6, feat_dim=3, seed=6)
        ep = make_params(3, 2, seed=7)
        out = emb.embed_nodes(view_of(g), ep)
        perm = derive_rng(0, "p").permutation(g.num_nodes)
        inv = np.argsort(perm)
        g2 = small_graph(
            [tuple(sorted((int(inv[u]), int(inv[v])))) for u, v in g.edges], n=6, feat_dim=3
        )
        g2 = type(g)(6, g2.edges, g.features[perm], g.labels[perm], g.num_labels)
        out2 = emb.embed_nodes(view_of(g2), ep)
        assert np.abs(out2 - out[perm]).max() <= 1e-12

    def test_locality_beyond_k_rounds(self):
        # path 0-1-2-3-4-5: with K=2, node 0 sees only nodes within 2 hops
        g = small_graph([(i, i + 1) for i in range(5)], n=6, feat_dim=3, seed=8)
        ep = make_params(3, 2, rounds=2, seed=9)
        base = emb.embed_nodes(view_of(g), ep)
        far = g.features.copy()
        far[5] += 10.0  # distance 5 from node 0
        g2 = type(g)(6, g.edges, far, g.labels, g.num_labels)
        out = emb.embed_nodes(view_of(g2), ep)
        assert np.abs(out[0] - base[0]).max() == 0.0
        assert np.abs(out[5] - base[5]).max() > 0.0


class TestEmbedGraph:
    def test_single_node(self):
        v = np.array([[1.0, 2.0, 3.0]])
        assert np.array_equal(emb.embed_graph(v), v[0])

    def test_opposite_vectors_cancel(self):
        v = np.array([[1.0, -2.0], [-1.0, 2.0]])
        assert np.array_equal(emb.embed_graph(v), np.zeros(2))

    def test_matches_column_mean(self):
        m = derive_rng(1, "m").standard_normal((5, 3))
        assert np.allclose(emb.embed_graph(m), m.mean(axis=0))

    def test_linearity(self):
        rng = derive_rng(2, "lin")
        a, b = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
        lhs = emb.embed_graph(a + b)
        rhs = emb.embed_graph(a) + emb.embed_graph(b)
        assert np.abs(lhs - rhs).max() <= 1e-12


class TestLabelEncoder:
    def test_histogram_examples(self):
        assert np.allclose(emb.label_histogram(np.array([2, 2, 2]), 4), [0, 0, 1, 0])
        assert np.allclose(emb.label_histogram(np.array([0, 0, 1]), 3), [2 / 3, 1 / 3, 0])

    def test_zero_weights_zero_vector(self):
        ep = make_params(3, 3, seed=0)
        ep.params[emb.ENC1][...] = 0.0
        ep.params[emb.ENC2][...] = 0.0
        assert np.all(emb.embed_labels(np.array([0, 1]), ep) == 0.0)
        assert np.all(emb.embed_single_label(2, ep) == 0.0)

    def test_empty_labels_rejected(self):
        ep = make_params(3, 3)
        with pytest.raises(GraphValidationError):
            emb.embed_labels(np.array([], dtype=int), ep)

    def test_out_of_range_rejected(self):
        ep = make_params(3, 3)
        with pytest.raises(GraphValidationError):
            emb.embed_single_label(3, ep)

    def test_distinct_labels_distinct_embeddings(self):
        ep = make_params(3, 4, seed=11)
        a = emb.embed_single_label(0, ep)
        b = emb.embed_single_label(1, ep)
        assert np.abs(a - b).max() > 0.0

    def test_single_node_consistency(self):
        ep = make_params(3, 4, seed=12)
        assert np.array_equal(
            emb.embed_labels(np.array([2]), ep), emb.embed_single_label(2, ep)
        )

    def test_all_label_embeddings_rows(self):
        ep = make_params(3, 4, seed=13)
        rows = emb.all_label_embeddings(ep)
        for lab in range(4):
            # batched vs single-row BLAS paths may round differently
            assert np.allclose(rows[lab], emb.embed_single_label(lab, ep), atol=1e-12)


class TestBackward:
    def test_node_embedding_gradient_fd(self):
        g = small_graph([(0, 1), (1, 2), (2, 3), (0, 4)], n=6, feat_dim=3, seed=20)
        view = view_of(g, extra=[(0, 5)])
        weight = derive_rng(3, "w").standard_normal((6, 4))
        ep = make_params(3, 2, dim=4, rounds=3, seed=21)

        def loss_fn(params):
            params.zero_grads()
            cache = emb.embed_nodes_forward(view, ep)
            emb.embed_nodes_backward(cache, weight, ep)
            return float((cache.out * weight).sum())

        assert finite_diff_check(loss_fn, ep.params, h=1e-6) <= 1e-4

    def test_label_encoder_gradient_fd(self):
        ep = make_params(3, 4, seed=22)
        hist = np.array([[0.25, 0.5, 0.25, 0.0], [1.0, 0.0, 0.0, 0.0]])
        weight = derive_rng(4, "w").standard_normal((2, ep.dim))

        def loss_fn(params):
            params.zero_grads()
            out, pre = emb.encode_label_input(hist, ep)
            emb.encode_label_backward(hist, pre, weight, ep)
            return float((out * weight).sum())

        assert finite_diff_check(loss_fn, ep.params, h=1e-6) <= 1e-4

    def test_state_vector_concatenation(self):
        g = small_graph([(0, 1)], n=3, num_labels=3, feat_dim=3, seed=23)
        ep = make_params(3, 3, seed=24)
        state = emb.encode_state(view_of(g), np.array([1, 2]), ep)
        assert np.array_equal(
            state.state_vector, np.concatenate([state.graph_vector, state.label_vector])
        )
        assert np.allclose(state.graph_vector, state.node_vectors.mean(axis=0))
