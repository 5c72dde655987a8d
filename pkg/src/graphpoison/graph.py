"""Attributed-graph data model, persistence, splits, generators, statistics.

The graph is undirected and unweighted: edges are stored once as canonical
``(u, v)`` pairs with ``u < v``.  Feature matrices are dense float64 and
labels are integer class indices.  All sampling here takes an explicit seed
and goes through an owned generator, never global state.
"""

from __future__ import annotations

import json
import math
from dataclasses import InitVar, dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from .errors import GraphParseError, GraphValidationError
from .rng import derive_rng

__all__ = [
    "Graph",
    "SplitSpec",
    "GraphStats",
    "load_graph",
    "save_graph",
    "largest_connected_component",
    "random_split",
    "sbm_generate",
    "sparsify",
    "graph_statistics",
    "gini_coefficient",
    "adjacency_csr",
    "round_half_up",
]


def round_half_up(x: float) -> int:
    """Round with ties away from zero toward +inf (0.5 -> 1, 1.5 -> 2)."""
    return int(math.floor(x + 0.5))


def canonical_edges(pairs: Iterable[tuple[int, int]]) -> frozenset[tuple[int, int]]:
    """Deduplicate and orient pairs so the smaller index comes first.

    Self-loops are rejected here because no caller ever legitimately
    produces one.
    """
    out = set()
    for u, v in pairs:
        u, v = int(u), int(v)
        if u == v:
            raise GraphValidationError(f"self-loop edge ({u},{v}) is not allowed")
        out.add((u, v) if u < v else (v, u))
    return frozenset(out)


@dataclass(eq=False)
class Graph:
    """Undirected attributed graph with per-node labels.

    Invariants (checked on construction unless ``validate=False`` for
    internally derived graphs): no self-loops, no duplicate pairs, all
    endpoints in range, one label and one feature row per node.
    Instances are treated as immutable after construction.
    """

    num_nodes: int
    edges: frozenset[tuple[int, int]]
    features: np.ndarray
    labels: np.ndarray
    num_labels: int
    validate: InitVar[bool] = True

    def __post_init__(self, validate: bool) -> None:
        if not isinstance(self.edges, frozenset):
            self.edges = canonical_edges(self.edges)
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if validate:
            self._check()

    def _check(self) -> None:
        n = self.num_nodes
        if n < 0:
            raise GraphValidationError("num_nodes must be non-negative")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise GraphValidationError(
                f"features must be [num_nodes x feat_dim], got {self.features.shape} for {n} nodes"
            )
        if self.labels.shape != (n,):
            raise GraphValidationError(
                f"labels must have length {n}, got {self.labels.shape}"
            )
        if self.num_labels < 1:
            raise GraphValidationError("num_labels must be >= 1")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_labels):
            raise GraphValidationError(
                f"labels must lie in [0, {self.num_labels}), got range "
                f"[{self.labels.min()}, {self.labels.max()}]"
            )
        for u, v in self.edges:
            if u == v:
                raise GraphValidationError(f"self-loop edge ({u},{v})")
            if u > v:
                raise GraphValidationError(f"edge ({u},{v}) not in canonical order")
            if not (0 <= u < n and 0 <= v < n):
                raise GraphValidationError(
                    f"edge ({u},{v}) has endpoint outside [0, {n})"
                )

    # -- derived views ---------------------------------------------------

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def feat_dim(self) -> int:
        return self.features.shape[1]

    @property
    def avg_degree(self) -> float:
        return 2.0 * len(self.edges) / self.num_nodes if self.num_nodes else 0.0

    @cached_property
    def edge_array(self) -> np.ndarray:
        """Edges as a sorted ``[m, 2]`` int64 array (ascending canonical)."""
        if not self.edges:
            return np.zeros((0, 2), dtype=np.int64)
        arr = np.array(sorted(self.edges), dtype=np.int64)
        arr.setflags(write=False)
        return arr

    @cached_property
    def degrees(self) -> np.ndarray:
        deg = np.bincount(self.edge_array.ravel(), minlength=self.num_nodes)
        deg.setflags(write=False)
        return deg

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and self.num_labels == other.num_labels
            and self.edges == other.edges
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint train/validation/test partition of the node indices."""

    train: frozenset[int]
    validation: frozenset[int]
    test: frozenset[int]
    seed: int

    def __post_init__(self) -> None:
        if self.train & self.validation or self.train & self.test or self.validation & self.test:
            raise GraphValidationError("split sets must be pairwise disjoint")

    @cached_property
    def train_array(self) -> np.ndarray:
        return np.array(sorted(self.train), dtype=np.int64)

    @cached_property
    def validation_array(self) -> np.ndarray:
        return np.array(sorted(self.validation), dtype=np.int64)

    @cached_property
    def test_array(self) -> np.ndarray:
        return np.array(sorted(self.test), dtype=np.int64)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "train": sorted(self.train),
            "validation": sorted(self.validation),
            "test": sorted(self.test),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        return cls(
            train=frozenset(d["train"]),
            validation=frozenset(d["validation"]),
            test=frozenset(d["test"]),
            seed=int(d["seed"]),
        )


@dataclass(frozen=True)
class GraphStats:
    """The five degree/structure statistics used by the auditor."""

    gini: float
    char_path_length: float
    dist_entropy: float
    power_law_exp: float
    triangle_count: int

    def to_dict(self) -> dict:
        return {
            "gini": self.gini,
            "char_path_length": self.char_path_length,
            "dist_entropy": self.dist_entropy,
            "power_law_exp": self.power_law_exp,
            "triangle_count": self.triangle_count,
        }


# -- persistence ----------------------------------------------------------

_META = "meta.json"
_EDGES = "edges.tsv"
_FEATURES = "features.tsv"
_LABELS = "labels.tsv"


def save_graph(g: Graph, path: str | Path) -> None:
    """Write ``g`` to a directory in the documented on-disk format.

    The output is byte-stable: saving the same graph twice produces
    identical files.  Floats use ``%.17g`` which round-trips float64
    exactly.
    """
    d = Path(path)
    try:
        d.mkdir(parents=True, exist_ok=True)
        meta = {
            "num_nodes": g.num_nodes,
            "feat_dim": g.feat_dim,
            "num_labels": g.num_labels,
        }
        (d / _META).write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
        with open(d / _EDGES, "w") as f:
            for u, v in g.edge_array:
                f.write(f"{u}\t{v}\n")
        with open(d / _FEATURES, "w") as f:
            for row in g.features:
                f.write("\t".join("%.17g" % x for x in row) + "\n")
        with open(d / _LABELS, "w") as f:
            for lab in g.labels:
                f.write(f"{lab}\n")
    except OSError as e:
        raise OSError(f"failed to save graph to {d}: {e}") from e


def load_graph(path: str | Path) -> Graph:
    """Load a graph directory written by :func:`save_graph`.

    Symmetric duplicates such as ``(0,1)`` and ``(1,0)`` collapse to a
    single canonical edge.  Malformed content raises
    :class:`GraphParseError` naming the offending file and line; dangling
    endpoints and self-loops raise :class:`GraphValidationError`.
    """
    d = Path(path)
    meta_path = d / _META
    if not meta_path.is_file():
        raise GraphParseError(f"{meta_path}: missing graph metadata file")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as e:
        raise GraphParseError(f"{meta_path}:{e.lineno}: invalid JSON: {e.msg}") from e
    try:
        n = int(meta["num_nodes"])
        feat_dim = int(meta["feat_dim"])
        num_labels = int(meta["num_labels"])
    except (KeyError, TypeError, ValueError) as e:
        raise GraphParseError(f"{meta_path}:1: bad or missing metadata field ({e})") from e

    edges = set()
    edges_path = d / _EDGES
    for lineno, line in enumerate(_read_lines(edges_path), start=1):
        parts = line.split("\t")
        if len(parts) != 2:
            raise GraphParseError(
                f"{edges_path}:{lineno}: expected 'src<TAB>dst', got {line!r}"
            )
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphParseError(
                f"{edges_path}:{lineno}: non-integer endpoint in {line!r}"
            ) from None
        if u == v:
            raise GraphValidationError(
                f"{edges_path}:{lineno}: self-loop edge ({u},{v})"
            )
        if not (0 <= u < n and 0 <= v < n):
            raise GraphValidationError(
                f"{edges_path}:{lineno}: edge ({u},{v}) endpoint outside [0, {n})"
            )
        edges.add((u, v) if u < v else (v, u))

    feats_path = d / _FEATURES
    rows = []
    for lineno, line in enumerate(_read_lines(feats_path), start=1):
        parts = line.split("\t") if line else []
        if len(parts) != feat_dim:
            raise GraphParseError(
                f"{feats_path}:{lineno}: expected {feat_dim} values, got {len(parts)}"
            )
        try:
            rows.append([float(x) for x in parts])
        except ValueError:
            raise GraphParseError(f"{feats_path}:{lineno}: non-numeric feature value") from None
    if len(rows) != n:
        raise GraphParseError(f"{feats_path}: expected {n} rows, got {len(rows)}")
    features = np.array(rows, dtype=np.float64).reshape(n, feat_dim)

    labels_path = d / _LABELS
    labels = []
    for lineno, line in enumerate(_read_lines(labels_path), start=1):
        try:
            labels.append(int(line))
        except ValueError:
            raise GraphParseError(f"{labels_path}:{lineno}: non-integer label {line!r}") from None
    if len(labels) != n:
        raise GraphParseError(f"{labels_path}: expected {n} labels, got {len(labels)}")

    return Graph(
        num_nodes=n,
        edges=frozenset(edges),
        features=features,
        labels=np.array(labels, dtype=np.int64),
        num_labels=num_labels,
    )


def _read_lines(path: Path) -> list[str]:
    if not path.is_file():
        raise GraphParseError(f"{path}: missing file")
    text = path.read_text()
    return [ln for ln in text.split("\n") if ln != ""]


# -- structure ops ---------------------------------------------------------


def adjacency_csr(num_nodes: int, edge_array: np.ndarray) -> sp.csr_array:
    """Symmetric 0/1 adjacency (no self-loops) as float64 CSR."""
    if edge_array.shape[0] == 0:
        return sp.csr_array((num_nodes, num_nodes), dtype=np.float64)
    rows = np.concatenate([edge_array[:, 0], edge_array[:, 1]])
    cols = np.concatenate([edge_array[:, 1], edge_array[:, 0]])
    data = np.ones(rows.shape[0], dtype=np.float64)
    return sp.csr_array((data, (rows, cols)), shape=(num_nodes, num_nodes))


def largest_connected_component(g: Graph) -> Graph:
    """Induced subgraph on the largest component, indices compacted.

    Ties between equal-sized components go to the one containing the
    smallest original node index.  The surviving nodes keep their relative
    order, so the mapping old->new is monotone.
    """
    if g.num_nodes < 1:
        raise GraphValidationError("graph must have at least one node")
    adj = adjacency_csr(g.num_nodes, g.edge_array)
    _, comp = csgraph.connected_components(adj, directed=False)
    sizes = np.bincount(comp)
    best_size = sizes.max()
    # first occurrence index per component == its minimum original index
    first_idx = np.full(sizes.shape[0], g.num_nodes, dtype=np.int64)
    np.minimum.at(first_idx, comp, np.arange(g.num_nodes))
    candidates = np.flatnonzero(sizes == best_size)
    chosen = candidates[np.argmin(first_idx[candidates])]

    keep = np.flatnonzero(comp == chosen)
    remap = np.full(g.num_nodes, -1, dtype=np.int64)
    remap[keep] = np.arange(keep.shape[0])
    ea = g.edge_array
    if ea.shape[0]:
        mask = (comp[ea[:, 0]] == chosen) & (comp[ea[:, 1]] == chosen)
        new_edges = remap[ea[mask]]
        edges = frozenset((int(u), int(v)) for u, v in new_edges)
    else:
        edges = frozenset()
    return Graph(
        num_nodes=int(keep.shape[0]),
        edges=edges,
        features=g.features[keep],
        labels=g.labels[keep],
        num_labels=g.num_labels,
        validate=False,
    )


def random_split(g: Graph, seed: int) -> SplitSpec:
    """20% labeled (train/validation halves, train gets the ceiling), 80% test."""
    n = g.num_nodes
    if n < 10:
        raise GraphValidationError(f"random_split needs >= 10 nodes, got {n}")
    labeled = round_half_up(0.2 * n)
    n_train = (labeled + 1) // 2
    perm = derive_rng(seed, "split").permutation(n)
    train = frozenset(int(i) for i in perm[:n_train])
    validation = frozenset(int(i) for i in perm[n_train:labeled])
    test = frozenset(int(i) for i in perm[labeled:])
    return SplitSpec(train=train, validation=validation, test=test, seed=seed)


def sbm_generate(
    blocks: int,
    nodes_per_block: int,
    p_in: float,
    p_out: float,
    feat_dim: int,
    feat_signal: float,
    seed: int,
) -> Graph:
    """Stochastic-block-model fixture with block labels and noisy features.

    Block ``b`` owns the feature coordinates ``j`` with ``j % blocks == b``;
    those coordinates get mean ``feat_signal`` and everything is overlaid
    with unit Gaussian noise.  Deterministic per seed.
    """
    if blocks < 2:
        raise GraphValidationError("sbm_generate needs at least 2 blocks")
    if not (0.0 <= p_in <= 1.0 and 0.0 <= p_out <= 1.0):
        raise GraphValidationError("p_in and p_out must lie in [0, 1]")
    n = blocks * nodes_per_block
    labels = np.repeat(np.arange(blocks, dtype=np.int64), nodes_per_block)
    rng = derive_rng(seed, "sbm")

    u = rng.random((n, n))
    same = labels[:, None] == labels[None, :]
    prob = np.where(same, p_in, p_out)
    iu, ju = np.triu_indices(n, k=1)
    hit = u[iu, ju] < prob[iu, ju]
    edges = frozenset((int(a), int(b)) for a, b in zip(iu[hit], ju[hit]))

    means = np.zeros((blocks, feat_dim))
    for b in range(blocks):
        means[b, np.arange(feat_dim) % blocks == b] = feat_signal
    features = means[labels] + rng.standard_normal((n, feat_dim))

    return Graph(
        num_nodes=n,
        edges=edges,
        features=features,
        labels=labels,
        num_labels=blocks,
        validate=False,
    )


def sparsify(g: Graph, fraction: float, seed: int) -> Graph:
    """Uniformly remove ``round(fraction * |E|)`` edges; nodes untouched."""
    if not (0.0 <= fraction <= 1.0):
        raise GraphValidationError(f"fraction must lie in [0, 1], got {fraction}")
    m = g.num_edges
    k_remove = round_half_up(fraction * m)
    rng = derive_rng(seed, "sparsify")
    drop = rng.choice(m, size=k_remove, replace=False)
    keep_mask = np.ones(m, dtype=bool)
    keep_mask[drop] = False
    kept = g.edge_array[keep_mask]
    return Graph(
        num_nodes=g.num_nodes,
        edges=frozenset((int(u), int(v)) for u, v in kept),
        features=g.features,
        labels=g.labels,
        num_labels=g.num_labels,
        validate=False,
    )


# -- statistics ------------------------------------------------------------


def gini_coefficient(degrees: np.ndarray) -> float:
    """Mean-absolute-difference Gini of a degree sequence.

    sum_ij |d_i - d_j| / (2 n^2 mean(d)); 0 for constant sequences, < 1
    always.
    """
    d = np.asarray(degrees, dtype=np.float64)
    n = d.shape[0]
    total = d.sum()
    if n == 0 or total <= 0:
        raise GraphValidationError("gini needs at least one positive degree")
    # sorted form of the O(n^2) double sum
    ds = np.sort(d)
    i = np.arange(1, n + 1)
    mad_sum = 2.0 * float(((2 * i - n - 1) * ds).sum())
    return mad_sum / (2.0 * n * total)


def graph_statistics(g: Graph) -> GraphStats:
    """All five auditor statistics; path length averages connected pairs only."""
    if g.num_edges == 0:
        raise GraphValidationError("graph statistics need at least one edge (no edges)")
    deg = g.degrees.astype(np.float64)
    n = g.num_nodes
    m = g.num_edges

    gini = gini_coefficient(deg)

    p = deg[deg > 0] / (2.0 * m)
    dist_entropy = float(-(p * np.log(p)).sum() / math.log(n))

    pos = deg[deg >= 1.0]
    log_sum = float(np.log(pos).sum())
    power_law = 1.0 + pos.shape[0] / log_sum if log_sum > 0 else math.inf

    adj = adjacency_csr(n, g.edge_array)
    cpl = _characteristic_path_length(adj)
    tri = _triangle_count(adj)

    return GraphStats(
        gini=gini,
        char_path_length=cpl,
        dist_entropy=dist_entropy,
        power_law_exp=power_law,
        triangle_count=tri,
    )


def _characteristic_path_length(adj: sp.csr_array, chunk: int = 512) -> float:
    """Mean BFS distance over connected node pairs, chunked to bound memory."""
    n = adj.shape[0]
    total = 0.0
    pairs = 0
    for start in range(0, n, chunk):
        idx = np.arange(start, min(start + chunk, n))
        dist = csgraph.shortest_path(adj, method="D", directed=False, unweighted=True, indices=idx)
        finite = np.isfinite(dist)
        total += float(dist[finite].sum())
        pairs += int(finite.sum()) - idx.shape[0]  # drop zero diagonal entries
    if pairs == 0:
        return 0.0
    # each unordered pair was counted twice
    return total / pairs


def _triangle_count(adj: sp.csr_array) -> int:
    paths2 = adj @ adj
    closed = paths2.multiply(adj).sum()
    return int(round(closed / 6.0))
