"""Two-layer graph convolutional classifier (victim and surrogate).

Forward pass: softmax(A_hat . ReLU(A_hat . X . W0) . W1) with the
symmetric self-loop normalization A_hat = D^{-1/2} (A + I) D^{-1/2}.
Training is full-batch cross-entropy over the labeled nodes, with early
stopping on validation loss and best-weight restoration.  Fully
deterministic for a fixed config seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import numerics
from .errors import ConfigError, NonFiniteError, ShapeError
from .graph import Graph, SplitSpec
from .rng import derive_seed

try:  # the compiled trainer is optional; see _gcn_kernel
    from ._gcn_kernel import gcn_train_kernel as _kernel
except ImportError:  # pragma: no cover - depends on the environment
    _kernel = None

__all__ = [
    "TrainConfig",
    "GcnModel",
    "normalize_adjacency",
    "normalized_adjacency_from_edges",
    "forward",
    "train",
    "train_core",
    "predict",
    "accuracy",
    "save_model",
    "load_model",
]


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one classifier training run."""

    epochs: int = 200
    lr: float = 0.01
    hidden_dim: int = 16
    weight_decay: float = 5e-4  # applied to W0 only
    patience: int = 30
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.hidden_dim < 1:
            raise ConfigError("epochs and hidden_dim must be >= 1")


@dataclass(eq=False)
class GcnModel:
    """Trained weights plus the normalized adjacency they were fit on."""

    params: numerics.ParamSet
    hidden_dim: int
    feat_dim: int
    num_labels: int
    seed: int
    graph: Graph | None = None
    adj: sp.csr_array | None = None

    @property
    def w0(self) -> np.ndarray:
        return self.params["W0"]

    @property
    def w1(self) -> np.ndarray:
        return self.params["W1"]


def normalized_adjacency_from_edges(num_nodes: int, edge_array: np.ndarray) -> sp.csr_array:
    """Symmetric normalization of A + I; isolated nodes get a unit self-loop."""
    deg_hat = np.bincount(edge_array.ravel(), minlength=num_nodes).astype(np.float64) + 1.0
    inv_sqrt = 1.0 / np.sqrt(deg_hat)
    diag = np.arange(num_nodes, dtype=np.int64)
    rows = np.concatenate([edge_array[:, 0], edge_array[:, 1], diag])
    cols = np.concatenate([edge_array[:, 1], edge_array[:, 0], diag])
    data = inv_sqrt[rows] * inv_sqrt[cols]
    return sp.csr_array((data, (rows, cols)), shape=(num_nodes, num_nodes))


def normalize_adjacency(g: Graph) -> sp.csr_array:
    return normalized_adjacency_from_edges(g.num_nodes, g.edge_array)


def _forward_probs(
    adj: sp.csr_array, x: np.ndarray, w0: np.ndarray, w1: np.ndarray
) -> np.ndarray:
    if x.shape[1] != w0.shape[0] or w0.shape[1] != w1.shape[0]:
        raise ShapeError(
            f"incompatible shapes: X {x.shape}, W0 {w0.shape}, W1 {w1.shape}"
        )
    h1 = numerics.relu_forward(adj @ (x @ w0))
    logits = (adj @ h1) @ w1
    return numerics.softmax_rows(logits)


def forward(model: GcnModel, g: Graph) -> np.ndarray:
    """Per-node class probabilities; rows sum to one."""
    adj = model.adj if (model.graph is g and model.adj is not None) else normalize_adjacency(g)
    return _forward_probs(adj, g.features, model.w0, model.w1)


def train_core(
    adj: sp.csr_array,
    x: np.ndarray,
    labels: np.ndarray,
    num_labels: int,
    train_idx: np.ndarray,
    val_idx: np.ndarray,
    cfg: TrainConfig,
) -> tuple[numerics.ParamSet, np.ndarray]:
    """Array-level trainer shared by the public API and the attack loop.

    Returns the trained parameters (best-validation weights restored) and
    the final probability matrix.  ``val_idx`` may be empty, which disables
    early stopping.  Uses the compiled kernel when numba is importable;
    the numpy fallback below implements the identical procedure.
    """
    if train_idx.size == 0:
        raise ValueError("training set must be nonempty")
    f = x.shape[1]

    params = numerics.ParamSet()
    params.add("W0", numerics.glorot_init(f, cfg.hidden_dim, derive_seed(cfg.seed, "gcn-w0")))
    params.add("W1", numerics.glorot_init(cfg.hidden_dim, num_labels, derive_seed(cfg.seed, "gcn-w1")))
    w0 = params["W0"]
    w1 = params["W1"]

    ax = adj @ x  # reused every epoch: first layer is (A_hat X) W0

    if _kernel is not None:
        bw0, bw1, status = _kernel(
            adj.indptr,
            adj.indices,
            adj.data,
            np.ascontiguousarray(ax),
            labels.astype(np.int64),
            train_idx.astype(np.int64),
            val_idx.astype(np.int64),
            w0,
            w1,
            cfg.epochs,
            cfg.lr,
            cfg.weight_decay,
            cfg.patience,
        )
        if status != 0:
            raise NonFiniteError("non-finite training loss in GCN kernel")
        params.set_values({"W0": bw0, "W1": bw1})
        probs = _forward_probs(adj, x, params["W0"], params["W1"])
        return params, probs

    use_val = val_idx.size > 0
    best_val = np.inf
    best = (w0.copy(), w1.copy())
    wait = 0
    n_train = train_idx.size
    train_targets = labels[train_idx]
    val_targets = labels[val_idx] if use_val else None
    row_ar = np.arange(n_train)
    val_ar = np.arange(val_idx.size)

    def _log_probs(logits: np.ndarray) -> np.ndarray:
        shifted = logits - logits.max(axis=1, keepdims=True)
        np.exp(shifted, out=shifted)
        z = shifted.sum(axis=1, keepdims=True)
        shifted /= z
        return shifted  # row-softmax probabilities

    for epoch in range(cfg.epochs):
        h1 = ax @ w0
        h1r = np.maximum(h1, 0.0)
        ah = adj @ h1r
        logits = ah @ w1
        probs = _log_probs(logits)
        picked = probs[train_idx][row_ar, train_targets]
        loss = float(-np.log(np.maximum(picked, 1e-300)).mean())
        loss += 0.5 * cfg.weight_decay * float(np.square(w0).sum())
        if not np.isfinite(loss):
            raise NonFiniteError(f"non-finite training loss at epoch {epoch}")

        if use_val:
            vp = probs[val_idx][val_ar, val_targets]
            val_loss = float(-np.log(np.maximum(vp, 1e-300)).mean())
            if val_loss < best_val:
                best_val = val_loss
                best = (w0.copy(), w1.copy())
                wait = 0
            else:
                wait += 1
                if wait > cfg.patience:
                    break

        grad_logits = np.zeros_like(logits)
        gsub = probs[train_idx]
        gsub[row_ar, train_targets] -= 1.0
        grad_logits[train_idx] = gsub / n_train
        g1 = adj @ grad_logits
        params.grad("W1")[...] = ah.T @ grad_logits
        dh1 = (g1 @ w1.T) * (h1 > 0.0)
        params.grad("W0")[...] = ax.T @ dh1 + cfg.weight_decay * w0
        numerics.adam_step(params, cfg.lr)

    if use_val:
        # the weights after the final update also compete for best-val
        h1r = np.maximum(ax @ w0, 0.0)
        logits = (adj @ h1r) @ w1
        val_loss, _ = numerics.cross_entropy(logits, labels, val_idx)
        if val_loss < best_val:
            best = (w0.copy(), w1.copy())
        params.set_values({"W0": best[0], "W1": best[1]})

    probs = _forward_probs(adj, x, params["W0"], params["W1"])
    return params, probs


def train(
    g: Graph,
    split: SplitSpec,
    cfg: TrainConfig,
    override_nodes: Sequence[int] | np.ndarray | None = None,
    override_labels: Sequence[int] | np.ndarray | None = None,
) -> GcnModel:
    """Fit the classifier transductively on ``g``.

    The labeled set is ``split.train`` plus any ``override_nodes``
    (typically injected nodes); ``override_labels``, when given, replaces
    the stored labels of those nodes for the duration of training.
    """
    labels = g.labels
    train_idx = split.train_array
    if override_nodes is not None:
        extra = np.asarray(override_nodes, dtype=np.int64)
        if override_labels is not None:
            labels = labels.copy()
            labels[extra] = np.asarray(override_labels, dtype=np.int64)
        train_idx = np.unique(np.concatenate([train_idx, extra]))

    adj = normalize_adjacency(g)
    params, _ = train_core(adj, g.features, labels, g.num_labels, train_idx, split.validation_array, cfg)
    return GcnModel(
        params=params,
        hidden_dim=cfg.hidden_dim,
        feat_dim=g.feat_dim,
        num_labels=g.num_labels,
        seed=cfg.seed,
        graph=g,
        adj=adj,
    )


def predict(model: GcnModel, g: Graph) -> np.ndarray:
    """Argmax labels; ties resolve to the smallest label index."""
    return np.argmax(forward(model, g), axis=1)


def accuracy(pred: np.ndarray, truth: np.ndarray, over: Sequence[int] | np.ndarray) -> float:
    idx = np.asarray(sorted(over) if isinstance(over, (set, frozenset)) else over, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("accuracy needs a nonempty evaluation set")
    return float(np.mean(np.asarray(pred)[idx] == np.asarray(truth)[idx]))


def save_model(model: GcnModel, path: str | Path) -> None:
    """Checkpoint weights plus a JSON sidecar with the model dimensions."""
    p = Path(path)
    numerics.save_checkpoint(model.params, p)
    sidecar = {
        "hidden_dim": model.hidden_dim,
        "feat_dim": model.feat_dim,
        "num_labels": model.num_labels,
        "seed": model.seed,
    }
    p.with_suffix(p.suffix + ".meta.json").write_text(
        json.dumps(sidecar, sort_keys=True, indent=2) + "\n"
    )


def load_model(path: str | Path) -> GcnModel:
    p = Path(path)
    values = numerics.load_checkpoint(p)
    meta = json.loads(p.with_suffix(p.suffix + ".meta.json").read_text())
    params = numerics.ParamSet()
    for name in ("W0", "W1"):
        params.add(name, values[name])
    return GcnModel(
        params=params,
        hidden_dim=int(meta["hidden_dim"]),
        feat_dim=int(meta["feat_dim"]),
        num_labels=int(meta["num_labels"]),
        seed=int(meta["seed"]),
    )
