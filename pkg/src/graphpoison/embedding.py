"""State encoder for the attack MDP.

Node embeddings come from a small message-passing recursion over the
poisoned graph (zero-initialized, ReLU rounds); the graph embedding is
their mean; injected-node labels are encoded from their one-hot histogram
through a two-layer MLP.  The state vector is graph-embedding
concatenated with label-embedding.  All parameters live in a shared
ParamSet so gradients from the Q-heads flow back into them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import GraphValidationError, ShapeError
from .graph import Graph, adjacency_csr
from .numerics import ParamSet, glorot_init, relu_forward
from .rng import derive_seed

__all__ = [
    "EmbeddingParams",
    "GraphView",
    "StateEmbedding",
    "embed_nodes",
    "embed_graph",
    "embed_labels",
    "embed_single_label",
    "encode_state",
    "NodeEmbedCache",
]

LIFT = "emb_lift"
AGG = "emb_agg"
ENC1 = "emb_enc1"
ENC2 = "emb_enc2"


@dataclass
class EmbeddingParams:
    """Dimensions plus a handle to the shared trainable parameters."""

    params: ParamSet
    feat_dim: int
    num_labels: int
    dim: int = 64
    label_hidden: int = 32
    rounds: int = 2

    def __post_init__(self) -> None:
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")

    @classmethod
    def create(
        cls,
        feat_dim: int,
        num_labels: int,
        dim: int = 64,
        label_hidden: int = 32,
        rounds: int = 2,
        seed: int = 0,
        params: ParamSet | None = None,
    ) -> "EmbeddingParams":
        ps = params if params is not None else ParamSet()
        ps.add(LIFT, glorot_init(feat_dim, dim, derive_seed(seed, "emb-lift")))
        ps.add(AGG, glorot_init(dim, dim, derive_seed(seed, "emb-agg")))
        ps.add(ENC1, glorot_init(num_labels, label_hidden, derive_seed(seed, "emb-enc1")))
        ps.add(ENC2, glorot_init(label_hidden, dim, derive_seed(seed, "emb-enc2")))
        return cls(
            params=ps,
            feat_dim=feat_dim,
            num_labels=num_labels,
            dim=dim,
            label_hidden=label_hidden,
            rounds=rounds,
        )


@dataclass
class GraphView:
    """A graph as the encoder sees it: fixed base plus appended edges.

    ``base_adj`` is the binary adjacency (no self-loops) over all
    ``num_nodes`` vertices; ``extra_edges`` are additional undirected pairs
    layered on top (the adversarial edges during an episode).
    """

    num_nodes: int
    base_adj: sp.csr_array
    features: np.ndarray
    extra_edges: np.ndarray = field(
        default_factory=lambda: np.zeros((0, 2), dtype=np.int64)
    )

    @classmethod
    def from_graph(cls, g: Graph) -> "GraphView":
        return cls(
            num_nodes=g.num_nodes,
            base_adj=adjacency_csr(g.num_nodes, g.edge_array),
            features=g.features,
        )

    def neighbor_sums(self, m: np.ndarray) -> np.ndarray:
        """(A_base + A_extra) @ m without materializing the merged matrix."""
        out = self.base_adj @ m
        e = self.extra_edges
        if e.shape[0]:
            np.add.at(out, e[:, 0], m[e[:, 1]])
            np.add.at(out, e[:, 1], m[e[:, 0]])
        return out


@dataclass
class StateEmbedding:
    node_vectors: np.ndarray  # [n', d]
    graph_vector: np.ndarray  # [d]
    label_vector: np.ndarray  # [d]

    @property
    def state_vector(self) -> np.ndarray:
        return np.concatenate([self.graph_vector, self.label_vector])


@dataclass
class NodeEmbedCache:
    """Per-round intermediates needed by the backward pass."""

    out: np.ndarray
    rounds_m: list[np.ndarray]
    rounds_p: list[np.ndarray | None]
    view: GraphView
    xl: np.ndarray


def embed_nodes(view: GraphView, ep: EmbeddingParams) -> np.ndarray:
    """Final-round node embeddings, shape [num_nodes, dim]."""
    return embed_nodes_forward(view, ep).out


def embed_nodes_forward(
    view: GraphView, ep: EmbeddingParams, xl: np.ndarray | None = None
) -> NodeEmbedCache:
    """Run the recursion keeping intermediates; ``xl`` may be a precomputed
    features-times-lift product (it does not depend on the edges)."""
    p = ep.params
    if view.features.shape[1] != ep.feat_dim:
        raise ShapeError(
            f"features dim {view.features.shape[1]} != embedding feat_dim {ep.feat_dim}"
        )
    if xl is None:
        xl = view.features @ p[LIFT]
    agg = p[AGG]
    m: np.ndarray | None = None
    rounds_m: list[np.ndarray] = []
    rounds_p: list[np.ndarray | None] = []
    for _ in range(ep.rounds):
        if m is None:
            z = xl
            rounds_p.append(None)  # neighbor sum of the zero init
        else:
            nb = view.neighbor_sums(m)
            rounds_p.append(nb)
            z = xl + nb @ agg
        m = relu_forward(z)
        rounds_m.append(m)
    assert m is not None
    return NodeEmbedCache(out=m, rounds_m=rounds_m, rounds_p=rounds_p, view=view, xl=xl)


def embed_nodes_backward(cache: NodeEmbedCache, d_out: np.ndarray, ep: EmbeddingParams) -> None:
    """Accumulate gradients of the node embeddings into the ParamSet."""
    p = ep.params
    agg = p[AGG]
    d_lift = p.grad(LIFT)
    d_agg = p.grad(AGG)
    dm = d_out
    for k in range(len(cache.rounds_m) - 1, -1, -1):
        dz = dm * (cache.rounds_m[k] > 0.0)
        d_lift += cache.view.features.T @ dz
        nb = cache.rounds_p[k]
        if nb is not None:
            d_agg += nb.T @ dz
            dm = cache.view.neighbor_sums(dz @ agg.T)
        else:
            break


def embed_graph(node_vectors: np.ndarray) -> np.ndarray:
    """Mean over rows; the graph-level summary vector."""
    if node_vectors.shape[0] < 1:
        raise ShapeError("embed_graph needs at least one node vector")
    return node_vectors.mean(axis=0)


def label_histogram(adv_labels: np.ndarray, num_labels: int) -> np.ndarray:
    adv_labels = np.asarray(adv_labels, dtype=np.int64)
    if adv_labels.size == 0:
        raise GraphValidationError("label histogram needs at least one injected node")
    if adv_labels.min() < 0 or adv_labels.max() >= num_labels:
        raise GraphValidationError(
            f"labels must lie in [0, {num_labels}), got [{adv_labels.min()}, {adv_labels.max()}]"
        )
    return np.bincount(adv_labels, minlength=num_labels) / adv_labels.size


def encode_label_input(rows: np.ndarray, ep: EmbeddingParams) -> tuple[np.ndarray, np.ndarray]:
    """Batched two-layer encoder on histogram/one-hot rows [B, L] -> [B, d].

    Returns (output, pre-activation) so callers can backprop.
    """
    pre = rows @ ep.params[ENC1]
    return relu_forward(pre) @ ep.params[ENC2], pre


def encode_label_backward(
    rows: np.ndarray, pre: np.ndarray, d_out: np.ndarray, ep: EmbeddingParams
) -> None:
    p = ep.params
    h = relu_forward(pre)
    p.grad(ENC2)[...] += h.T @ d_out
    dpre = (d_out @ p[ENC2].T) * (pre > 0.0)
    p.grad(ENC1)[...] += rows.T @ dpre


def embed_labels(adv_labels: np.ndarray, ep: EmbeddingParams) -> np.ndarray:
    """Encode the injected-node label multiset via its mean one-hot."""
    hist = label_histogram(adv_labels, ep.num_labels)
    out, _ = encode_label_input(hist[None, :], ep)
    return out[0]


def embed_single_label(label: int, ep: EmbeddingParams) -> np.ndarray:
    if not (0 <= label < ep.num_labels):
        raise GraphValidationError(f"label {label} outside [0, {ep.num_labels})")
    onehot = np.zeros((1, ep.num_labels))
    onehot[0, label] = 1.0
    out, _ = encode_label_input(onehot, ep)
    return out[0]


def all_label_embeddings(ep: EmbeddingParams) -> np.ndarray:
    """Every one-hot label through the encoder at once, shape [L, d]."""
    out, _ = encode_label_input(np.eye(ep.num_labels), ep)
    return out


def encode_state(view: GraphView, adv_labels: np.ndarray, ep: EmbeddingParams) -> StateEmbedding:
    """Full state embedding: nodes, their mean, and the label encoding."""
    nodes = embed_nodes(view, ep)
    return StateEmbedding(
        node_vectors=nodes,
        graph_vector=embed_graph(nodes),
        label_vector=embed_labels(adv_labels, ep),
    )
