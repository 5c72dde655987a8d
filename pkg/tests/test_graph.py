"""Graph model, persistence, splits, generators, and the statistics suite.

The statistics tests check against brute-force oracles implemented here
from their definitions: exhaustive triple enumeration for triangles, the
O(n^2) double loop for Gini, direct formulas for entropy and the power-law
MLE, and python BFS for path lengths.
"""

from __future__ import annotations

import hashlib
import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphpoison.errors import GraphParseError, GraphValidationError
from graphpoison.graph import (
    Graph,
    SplitSpec,
    gini_coefficient,
    graph_statistics,
    largest_connected_component,
    load_graph,
    random_split,
    round_half_up,
    save_graph,
    sbm_generate,
    sparsify,
)
from conftest import small_graph


# -- oracles -----------------------------------------------------------------


def oracle_triangles(g: Graph) -> int:
    adj = {i: set() for i in range(g.num_nodes)}
    for u, v in g.edges:
        adj[u].add(v)
        adj[v].add(u)
    count = 0
    for a in range(g.num_nodes):
        for b in range(a + 1, g.num_nodes):
            for c in range(b + 1, g.num_nodes):
                if b in adj[a] and c in adj[a] and c in adj[b]:
                    count += 1
    return count


def oracle_gini(degrees) -> float:
    d = list(map(float, degrees))
    n = len(d)
    total = sum(abs(a - b) for a in d for b in d)
    return total / (2 * n * n * (sum(d) / n))


def oracle_entropy(g: Graph) -> float:
    deg = g.degrees
    m = g.num_edges
    s = 0.0
    for d in deg:
        if d > 0:
            p = d / (2 * m)
            s -= p * math.log(p)
    return s / math.log(g.num_nodes)


def oracle_power_law(g: Graph) -> float:
    pos = [d for d in g.degrees if d >= 1]
    s = sum(math.log(d) for d in pos)
    return 1.0 + len(pos) / s if s > 0 else math.inf


def oracle_cpl(g: Graph) -> float:
    adj = {i: [] for i in range(g.num_nodes)}
    for u, v in g.edges:
        adj[u].append(v)
        adj[v].append(u)
    total, pairs = 0, 0
    for src in range(g.num_nodes):
        dist = {src: 0}
        q = deque([src])
        while q:
            x = q.popleft()
            for y in adj[x]:
                if y not in dist:
                    dist[y] = dist[x] + 1
                    q.append(y)
        for node, d in dist.items():
            if node > src:
                total += d
                pairs += 1
    return total / pairs if pairs else 0.0


def oracle_components(g: Graph) -> list[set[int]]:
    adj = {i: [] for i in range(g.num_nodes)}
    for u, v in g.edges:
        adj[u].append(v)
        adj[v].append(u)
    seen, comps = set(), []
    for s in range(g.num_nodes):
        if s in seen:
            continue
        comp, q = {s}, deque([s])
        seen.add(s)
        while q:
            x = q.popleft()
            for y in adj[x]:
                if y not in seen:
                    seen.add(y)
                    comp.add(y)
                    q.append(y)
        comps.append(comp)
    return comps


def random_graph(n: int, p: float, seed: int) -> Graph:
    rng = np.random.default_rng(seed)
    edges = {
        (i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p
    }
    return Graph(
        num_nodes=n,
        edges=frozenset(edges),
        features=rng.standard_normal((n, 2)),
        labels=rng.integers(0, 2, size=n),
        num_labels=2,
    )


# -- persistence -------------------------------------------------------------


class TestPersistence:
    def test_round_trip_identity(self, tmp_path):
        g = small_graph([(0, 1), (1, 2), (0, 3)], n=5)
        save_graph(g, tmp_path / "g")
        assert load_graph(tmp_path / "g") == g

    def test_symmetric_pair_dedup(self, tmp_path):
        g = small_graph([(0, 1)], n=3)
        save_graph(g, tmp_path / "g")
        edges = (tmp_path / "g" / "edges.tsv").read_text()
        (tmp_path / "g" / "edges.tsv").write_text(edges + "1\t0\n")
        loaded = load_graph(tmp_path / "g")
        assert loaded.edges == frozenset({(0, 1)})

    def test_dangling_endpoint_rejected(self, tmp_path):
        g = small_graph([(0, 1)], n=3)
        save_graph(g, tmp_path / "g")
        (tmp_path / "g" / "edges.tsv").write_text("0\t5\n")
        with pytest.raises(GraphValidationError, match="outside"):
            load_graph(tmp_path / "g")

    def test_self_loop_rejected(self, tmp_path):
        g = small_graph([(0, 1)], n=3)
        save_graph(g, tmp_path / "g")
        (tmp_path / "g" / "edges.tsv").write_text("2\t2\n")
        with pytest.raises(GraphValidationError, match="self-loop"):
            load_graph(tmp_path / "g")

    def test_parse_error_names_line(self, tmp_path):
        g = small_graph([(0, 1)], n=3)
        save_graph(g, tmp_path / "g")
        (tmp_path / "g" / "edges.tsv").write_text("0\t1\nnot-an-int\t2\n")
        with pytest.raises(GraphParseError, match="edges.tsv:2"):
            load_graph(tmp_path / "g")

    def test_feature_error_names_line(self, tmp_path):
        g = small_graph([(0, 1)], n=3, feat_dim=2)
        save_graph(g, tmp_path / "g")
        lines = (tmp_path / "g" / "features.tsv").read_text().splitlines()
        lines[1] = "0.5"
        (tmp_path / "g" / "features.tsv").write_text("\n".join(lines) + "\n")
        with pytest.raises(GraphParseError, match="features.tsv:2"):
            load_graph(tmp_path / "g")

    def test_empty_edge_graph(self, tmp_path):
        g = small_graph([], n=4)
        save_graph(g, tmp_path / "g")
        assert load_graph(tmp_path / "g").num_edges == 0

    def test_double_save_byte_identical(self, tmp_path):
        g = small_graph([(0, 1), (2, 3)], n=6, feat_dim=4, seed=9)
        save_graph(g, tmp_path / "a")
        save_graph(g, tmp_path / "b")
        for name in ("meta.json", "edges.tsv", "features.tsv", "labels.tsv"):
            ha = hashlib.sha256((tmp_path / "a" / name).read_bytes()).hexdigest()
            hb = hashlib.sha256((tmp_path / "b" / name).read_bytes()).hexdigest()
            assert ha == hb, name

    def test_float_round_trip_exact(self, tmp_path):
        g = small_graph([(0, 1)], n=2, feat_dim=3, seed=4)
        save_graph(g, tmp_path / "g")
        assert np.array_equal(load_graph(tmp_path / "g").features, g.features)


class TestValidation:
    def test_constructor_rejects_self_loop(self):
        with pytest.raises(GraphValidationError):
            small_graph([(1, 1)], n=3)

    def test_constructor_rejects_out_of_range(self):
        with pytest.raises(GraphValidationError):
            Graph(2, frozenset({(0, 5)}), np.zeros((2, 1)), np.zeros(2, dtype=int), 2)

    def test_labels_length_checked(self):
        with pytest.raises(GraphValidationError):
            Graph(3, frozenset(), np.zeros((3, 1)), np.zeros(2, dtype=int), 2)

    def test_dedup_storage(self):
        g = Graph(3, [(1, 0), (0, 1)], np.zeros((3, 1)), np.zeros(3, dtype=int), 1)
        assert g.edges == frozenset({(0, 1)})
        assert list(g.degrees) == [1, 1, 0]


# -- LCC ----------------------------------------------------------------------


class TestLCC:
    def test_two_triangles_plus_isolated(self):
        g = small_graph([(0, 1), (1, 2), (0, 2), (4, 5), (5, 6), (4, 6)], n=8)
        lcc = largest_connected_component(g)
        assert lcc.num_nodes == 3
        assert lcc.edges == frozenset({(0, 1), (0, 2), (1, 2)})
        # tie between the triangles goes to the one containing node 0
        assert np.array_equal(lcc.features, g.features[[0, 1, 2]])

    def test_connected_graph_identity(self):
        g = small_graph([(0, 1), (1, 2), (2, 3)], n=4)
        assert largest_connected_component(g) == g

    def test_idempotent(self):
        g = random_graph(30, 0.06, seed=2)
        once = largest_connected_component(g)
        assert largest_connected_component(once) == once

    def test_matches_oracle_components(self):
        for seed in range(5):
            g = random_graph(25, 0.07, seed=seed)
            comps = oracle_components(g)
            best = max(comps, key=lambda c: (len(c), -min(c)))
            assert largest_connected_component(g).num_nodes == len(best)


# -- splits --------------------------------------------------------------------


class TestSplit:
    def test_sizes_n100(self):
        g = random_graph(100, 0.05, seed=0)
        s = random_split(g, seed=0)
        assert (len(s.train), len(s.validation), len(s.test)) == (10, 10, 80)

    def test_deterministic(self):
        g = random_graph(50, 0.05, seed=0)
        assert random_split(g, 7) == random_split(g, 7)
        assert random_split(g, 7) != random_split(g, 8)

    def test_citeseer_sized_arithmetic(self):
        g = random_graph(2110, 0.001, seed=0)
        s = random_split(g, seed=3)
        assert len(s.train) + len(s.validation) == 422
        assert len(s.test) == 1688

    @given(n=st.integers(10, 300), seed=st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_partition_property(self, n, seed):
        g = Graph(n, frozenset(), np.zeros((n, 1)), np.zeros(n, dtype=int), 1)
        s = random_split(g, seed)
        union = s.train | s.validation | s.test
        assert union == set(range(n))
        assert len(s.train) + len(s.validation) == round_half_up(0.2 * n)
        assert len(s.train) - len(s.validation) in (0, 1)

    def test_split_json_round_trip(self):
        g = random_graph(40, 0.1, seed=0)
        s = random_split(g, seed=5)
        assert SplitSpec.from_dict(s.to_dict()) == s

    def test_too_small_rejected(self):
        g = random_graph(5, 0.5, seed=0)
        with pytest.raises(GraphValidationError):
            random_split(g, 0)


# -- generators -----------------------------------------------------------------


class TestSbm:
    def test_extreme_probabilities(self):
        g = sbm_generate(2, 3, 1.0, 0.0, feat_dim=2, feat_signal=1.0, seed=0)
        expect = {(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)}
        assert g.edges == frozenset(expect)
        assert list(g.labels) == [0, 0, 0, 1, 1, 1]

    def test_deterministic(self):
        a = sbm_generate(2, 10, 0.3, 0.05, 4, 1.0, seed=42)
        b = sbm_generate(2, 10, 0.3, 0.05, 4, 1.0, seed=42)
        assert a == b

    def test_edge_count_matches_binomial_expectation(self):
        blocks, m, p_in, p_out = 2, 12, 0.4, 0.1
        n_in_pairs = blocks * m * (m - 1) // 2
        n_out_pairs = (blocks * (blocks - 1) // 2) * m * m
        mean = n_in_pairs * p_in + n_out_pairs * p_out
        var = n_in_pairs * p_in * (1 - p_in) + n_out_pairs * p_out * (1 - p_out)
        counts = [
            sbm_generate(blocks, m, p_in, p_out, 2, 1.0, seed=s).num_edges
            for s in range(20)
        ]
        sample_mean = float(np.mean(counts))
        # 3 sigma of the mean of 20 draws
        assert abs(sample_mean - mean) <= 3 * math.sqrt(var / 20)

    def test_feature_block_means(self):
        g = sbm_generate(2, 200, 0.01, 0.01, feat_dim=4, feat_signal=2.0, seed=1)
        block0 = g.features[g.labels == 0]
        # coordinates 0, 2 belong to block 0: mean 2.0; noise sigma 1/sqrt(200)
        assert abs(block0[:, 0].mean() - 2.0) < 0.3
        assert abs(block0[:, 1].mean() - 0.0) < 0.3


class TestSparsify:
    def test_identity_at_zero(self, sbm_small):
        assert sparsify(sbm_small, 0.0, seed=1) == sbm_small

    def test_all_removed_at_one(self, sbm_small):
        assert sparsify(sbm_small, 1.0, seed=1).num_edges == 0

    def test_exact_rounding(self):
        g = random_graph(20, 0.06, seed=3)
        assert g.num_edges >= 4
        out = sparsify(g, 0.5, seed=0)
        assert out.num_edges == g.num_edges - round_half_up(0.5 * g.num_edges)

    @given(frac=st.floats(0, 1), seed=st.integers(0, 1000))
    @settings(max_examples=25, deadline=None)
    def test_count_property(self, frac, seed):
        g = random_graph(15, 0.3, seed=1)
        out = sparsify(g, frac, seed)
        assert out.num_edges == g.num_edges - round_half_up(frac * g.num_edges)
        assert out.num_nodes == g.num_nodes
        assert out.edges <= g.edges


# -- statistics -------------------------------------------------------------------


class TestStatistics:
    def test_ring_gini_zero_entropy_one(self):
        n = 8
        g = small_graph([(i, (i + 1) % n) for i in range(n)], n=n)
        stats = graph_statistics(g)
        assert stats.gini == 0.0
        assert abs(stats.dist_entropy - 1.0) <= 1e-12

    def test_complete_graph_triangles(self):
        k4 = small_graph([(i, j) for i in range(4) for j in range(i + 1, 4)], n=4)
        k3 = small_graph([(0, 1), (0, 2), (1, 2)], n=3)
        assert graph_statistics(k4).triangle_count == 4
        assert graph_statistics(k3).triangle_count == 1

    def test_gini_hand_value(self):
        assert gini_coefficient(np.array([1.0, 3.0])) == pytest.approx(0.25, abs=1e-15)
        assert gini_coefficient(np.array([2.0, 2.0, 2.0, 2.0])) == 0.0

    def test_gini_matches_double_loop(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            deg = rng.integers(0, 20, size=rng.integers(2, 40)).astype(float)
            if deg.sum() == 0:
                deg[0] = 1
            assert gini_coefficient(deg) == pytest.approx(oracle_gini(deg), abs=1e-12)

    def test_gini_rejects_all_zero(self):
        with pytest.raises(GraphValidationError):
            gini_coefficient(np.zeros(4))

    def test_no_edges_rejected(self):
        g = small_graph([], n=3)
        with pytest.raises(GraphValidationError, match="no edges"):
            graph_statistics(g)

    def test_all_against_oracles_random_graphs(self):
        for seed in range(8):
            g = random_graph(int(10 + 4 * seed), 0.15, seed=seed)
            if g.num_edges == 0:
                continue
            stats = graph_statistics(g)
            assert stats.triangle_count == oracle_triangles(g)
            assert stats.gini == pytest.approx(oracle_gini(g.degrees), abs=1e-12)
            assert stats.dist_entropy == pytest.approx(oracle_entropy(g), abs=1e-12)
            assert stats.power_law_exp == pytest.approx(oracle_power_law(g), abs=1e-12)
            assert stats.char_path_length == pytest.approx(oracle_cpl(g), abs=1e-12)

    def test_bounds_properties(self):
        for seed in range(6):
            g = random_graph(20, 0.2, seed=seed + 50)
            if g.num_edges == 0:
                continue
            stats = graph_statistics(g)
            assert 0.0 <= stats.gini <= 1.0
            assert stats.dist_entropy <= 1.0 + 1e-12
            assert stats.triangle_count >= 0

    def test_entropy_one_iff_regular(self):
        ring = small_graph([(i, (i + 1) % 6) for i in range(6)], n=6)
        star = small_graph([(0, i) for i in range(1, 6)], n=6)
        assert abs(graph_statistics(ring).dist_entropy - 1.0) <= 1e-12
        assert graph_statistics(star).dist_entropy < 1.0 - 1e-12
