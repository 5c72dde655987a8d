"""The node-injection poisoning MDP.

An episode starts from the clean graph plus a set of injected nodes with
synthesized features and random labels.  Each step wires one adversarial
edge (injected-injected or injected-clean) and rewrites the label of the
chosen injected node; the episode ends when the edge budget is spent.
The reward compares surrogate-classifier success rates before and after
the action: +1 for a strict increase, -1 otherwise.

Injected nodes that are still isolated are dropped before any classifier
training (they would otherwise leak label information through shared
weights); this is what makes a zero-budget attack provably inert.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, GraphValidationError, InvalidActionError
from .gcn import TrainConfig, normalized_adjacency_from_edges, train_core
from .graph import Graph, SplitSpec, adjacency_csr, round_half_up, save_graph, load_graph
from .rng import derive_rng, derive_seed

__all__ = [
    "AttackConfig",
    "PoisonState",
    "HierAction",
    "PoisonEnv",
    "synth_features",
    "apply_action",
    "export_poisoned",
    "load_poisoned",
]


@dataclass(frozen=True)
class AttackConfig:
    """Budget geometry and reward knobs for one poisoning run.

    ``deg_inject`` defaults to the clean graph's average degree; the edge
    budget is ``round(r * |V| * deg_inject)`` and the number of injected
    nodes ``round(r * |V|)``.  ``max_r`` is a guardrail against absurdly
    conspicuous attacks and can be raised explicitly.
    """

    r: float
    deg_inject: float | None = None
    gamma: float = 0.9
    surrogate_epochs: int = 50
    feature_noise_seed: int = 0
    max_r: float = 0.10

    def __post_init__(self) -> None:
        if not (0.0 < self.r <= self.max_r):
            raise ConfigError(
                f"injection ratio r={self.r} outside (0, {self.max_r}]; raise max_r to override"
            )
        if not (0.0 < self.gamma <= 1.0):
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")

    def resolve(self, num_nodes: int, avg_degree: float) -> tuple[int, int]:
        """(num_injected, edge_budget) for a graph of this size and density."""
        deg = self.deg_inject if self.deg_inject is not None else avg_degree
        num_injected = round_half_up(self.r * num_nodes)
        budget = round_half_up(self.r * num_nodes * deg)
        return num_injected, budget


@dataclass(frozen=True)
class HierAction:
    """One hierarchical move: injected node, partner node, new label."""

    a1: int  # index into the injected set
    a2: int  # global index into V' = V + injected
    a3: int  # label index


@dataclass(frozen=True)
class PoisonState:
    """Immutable snapshot of the poisoning progress.

    ``adv_edges`` is ordered as played, each row ``(global_a1, a2)``;
    the clean edge set is never touched.
    """

    num_clean: int
    injected_features: np.ndarray
    adv_edges: np.ndarray  # [t, 2] int64, at least one endpoint injected
    adv_labels: np.ndarray  # [num_injected] int64
    steps_taken: int

    @property
    def num_injected(self) -> int:
        return self.adv_labels.shape[0]

    @property
    def num_total(self) -> int:
        return self.num_clean + self.num_injected

    @cached_property
    def edge_set(self) -> frozenset[tuple[int, int]]:
        return frozenset(
            (int(u), int(v)) if u < v else (int(v), int(u)) for u, v in self.adv_edges
        )

    @cached_property
    def adv_adj(self) -> sp.csr_array:
        """Adversarial-edge adjacency over the padded vertex set (no self-loops)."""
        return adjacency_csr(self.num_total, self.adv_edges)


def synth_features(g: Graph, num_injected: int, seed: int) -> np.ndarray:
    """Injected rows = column mean of the clean features plus unit noise."""
    if g.feat_dim < 1:
        raise GraphValidationError("need at least one feature dimension")
    rng = derive_rng(seed, "synth-features")
    mean = g.features.mean(axis=0)
    return mean[None, :] + rng.standard_normal((num_injected, g.feat_dim))


def apply_action(state: PoisonState, act: HierAction, budget: int | None = None) -> PoisonState:
    """Append one adversarial edge and set the chosen node's label.

    Raises :class:`InvalidActionError` naming the violated rule.
    """
    k = state.num_injected
    n_total = state.num_total
    if not (0 <= act.a1 < k):
        raise InvalidActionError(f"a1={act.a1} outside injected range [0, {k})")
    if not (0 <= act.a2 < n_total):
        raise InvalidActionError(f"a2={act.a2} outside node range [0, {n_total})")
    a1_global = state.num_clean + act.a1
    if act.a2 == a1_global:
        raise InvalidActionError(f"self-loop: a2 equals injected node {a1_global}")
    e = state.adv_edges
    if e.shape[0] and bool(
        (((e[:, 0] == a1_global) & (e[:, 1] == act.a2))
         | ((e[:, 0] == act.a2) & (e[:, 1] == a1_global))).any()
    ):
        raise InvalidActionError(f"duplicate edge ({a1_global}, {act.a2})")
    if budget is not None and state.steps_taken >= budget:
        raise InvalidActionError(f"budget of {budget} edges already spent")

    if act.a3 < 0:
        raise InvalidActionError(f"a3={act.a3} must be non-negative")
    new_edges = np.vstack([state.adv_edges, [a1_global, act.a2]]).astype(np.int64)
    new_labels = state.adv_labels.copy()
    new_labels[act.a1] = act.a3
    return PoisonState(
        num_clean=state.num_clean,
        injected_features=state.injected_features,
        adv_edges=new_edges,
        adv_labels=new_labels,
        steps_taken=state.steps_taken + 1,
    )


class PoisonEnv:
    """Owns the clean graph, the budget, and the surrogate reward model."""

    def __init__(
        self,
        g: Graph,
        cfg: AttackConfig,
        split: SplitSpec | None = None,
        surrogate_cfg: TrainConfig | None = None,
    ):
        self.graph = g
        self.cfg = cfg
        self.split = split
        self.num_injected, self.budget = cfg.resolve(g.num_nodes, g.avg_degree)
        capacity = self.num_injected * g.num_nodes + self.num_injected * (self.num_injected - 1) // 2
        if self.budget > capacity:
            raise ConfigError(
                f"budget {self.budget} exceeds the {capacity} possible adversarial edges"
            )
        if surrogate_cfg is None:
            surrogate_cfg = TrainConfig(epochs=cfg.surrogate_epochs, seed=derive_seed(0, "surrogate"))
        else:
            surrogate_cfg = replace(surrogate_cfg, epochs=cfg.surrogate_epochs)
        self.surrogate_cfg = surrogate_cfg
        self.num_labels = g.num_labels

        self._clean_edges = g.edge_array
        self._features_inj = synth_features(g, self.num_injected, cfg.feature_noise_seed)
        self._x_full = np.vstack([g.features, self._features_inj]) if self.num_injected else g.features
        self._train_clean = split.train_array if split is not None else None
        self._val = split.validation_array if split is not None else None
        self._initial_rate: float | None = None

    @property
    def x_full(self) -> np.ndarray:
        """Clean features stacked over injected features, [n + k, feat_dim]."""
        return self._x_full

    @property
    def clean_edge_array(self) -> np.ndarray:
        return self._clean_edges

    @property
    def injected_features(self) -> np.ndarray:
        return self._features_inj

    # -- episode control ---------------------------------------------------

    def reset(self, label_seed: int) -> PoisonState:
        """Fresh state: zero adversarial edges, uniformly random labels."""
        labels = derive_rng(label_seed, "adv-labels").integers(
            0, self.num_labels, size=self.num_injected, dtype=np.int64
        )
        return PoisonState(
            num_clean=self.graph.num_nodes,
            injected_features=self._features_inj,
            adv_edges=np.zeros((0, 2), dtype=np.int64),
            adv_labels=labels,
            steps_taken=0,
        )

    def is_terminal(self, state: PoisonState) -> bool:
        return state.steps_taken >= self.budget

    def valid_action_mask(
        self, state: PoisonState, a1: int | None = None
    ) -> tuple[np.ndarray, np.ndarray | None, np.ndarray]:
        """(level-1 mask over injected, level-2 mask over V' given a1, level-3 mask)."""
        n = self.graph.num_nodes
        k = self.num_injected
        n_total = n + k
        partner_counts = np.zeros(k, dtype=np.int64)
        e = state.adv_edges
        if e.shape[0]:
            flat = e.ravel()
            inj = flat[flat >= n] - n
            partner_counts = np.bincount(inj, minlength=k)
        level1 = partner_counts < (n_total - 1)

        level2 = None
        if a1 is not None:
            if not (0 <= a1 < k):
                raise InvalidActionError(f"a1={a1} outside injected range [0, {k})")
            level2 = np.ones(n_total, dtype=bool)
            g1 = n + a1
            level2[g1] = False
            if e.shape[0]:
                hit = e[:, 0] == g1
                level2[e[hit, 1]] = False
                hit = e[:, 1] == g1
                level2[e[hit, 0]] = False

        level3 = np.ones(self.num_labels, dtype=bool)
        return level1, level2, level3

    def apply_action(self, state: PoisonState, act: HierAction) -> PoisonState:
        if not (0 <= act.a3 < self.num_labels):
            raise InvalidActionError(f"a3={act.a3} outside label range [0, {self.num_labels})")
        return apply_action(state, act, budget=self.budget)

    # -- reward ------------------------------------------------------------

    def filtered_arrays(
        self, state: PoisonState
    ) -> tuple[int, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Training view with isolated injected nodes removed.

        Returns (num_nodes, edge_array, features, labels, labeled_extra)
        where indices of clean nodes are unchanged and the surviving
        injected nodes are compacted onto the tail.
        """
        n = self.graph.num_nodes
        k = self.num_injected
        e = state.adv_edges
        deg_inj = np.zeros(k, dtype=np.int64)
        if e.shape[0]:
            flat = e.ravel()
            inj = flat[flat >= n] - n
            deg_inj = np.bincount(inj, minlength=k)
        kept = np.flatnonzero(deg_inj > 0)
        remap = np.full(n + k, -1, dtype=np.int64)
        remap[:n] = np.arange(n)
        remap[n + kept] = n + np.arange(kept.shape[0])

        edges = np.vstack([self._clean_edges, remap[e]]) if e.shape[0] else self._clean_edges
        if kept.shape[0]:
            x = self._x_full[np.concatenate([np.arange(n), n + kept])]
            labels = np.concatenate([self.graph.labels, state.adv_labels[kept]])
        else:
            x = self.graph.features
            labels = self.graph.labels
        extra = np.arange(n, n + kept.shape[0], dtype=np.int64)
        return n + kept.shape[0], edges, x, labels, extra

    def success_rate(self, state: PoisonState) -> float:
        """Fraction of validation nodes the retrained surrogate mislabels."""
        if self._val is None or self._val.size == 0:
            raise GraphValidationError("success_rate needs a split with a nonempty validation set")
        if state.steps_taken == 0 and self._initial_rate is not None:
            return self._initial_rate
        n_f, edges, x, labels, extra = self.filtered_arrays(state)
        adj = normalized_adjacency_from_edges(n_f, edges)
        train_idx = np.concatenate([self._train_clean, extra])
        _, probs = train_core(
            adj, x, labels, self.num_labels, train_idx, self._val, self.surrogate_cfg
        )
        pred = np.argmax(probs[self._val], axis=1)
        rate = float(np.mean(pred != self.graph.labels[self._val]))
        if state.steps_taken == 0:
            self._initial_rate = rate
        return rate

    def initial_success_rate(self) -> float:
        if self._initial_rate is None:
            self.success_rate(
                PoisonState(
                    num_clean=self.graph.num_nodes,
                    injected_features=self._features_inj,
                    adv_edges=np.zeros((0, 2), dtype=np.int64),
                    adv_labels=np.zeros(self.num_injected, dtype=np.int64),
                    steps_taken=0,
                )
            )
        return self._initial_rate  # type: ignore[return-value]

    def step(
        self, state: PoisonState, act: HierAction, prev_rate: float
    ) -> tuple[PoisonState, int, float, bool]:
        """(next state, +-1 reward, next success rate, terminal flag)."""
        if self.is_terminal(state):
            raise InvalidActionError("episode is already terminal")
        nxt = self.apply_action(state, act)
        next_rate = self.success_rate(nxt)
        reward = 1 if next_rate > prev_rate else -1
        return nxt, reward, next_rate, self.is_terminal(nxt)

    # -- conversion / persistence ------------------------------------------

    def to_graph(self, state: PoisonState) -> Graph:
        """Merged poisoned graph (all injected nodes, isolated or not)."""
        g = self.graph
        merged = set(g.edges)
        merged.update(state.edge_set)
        labels = np.concatenate([g.labels, state.adv_labels]) if state.num_injected else g.labels
        return Graph(
            num_nodes=state.num_total,
            edges=frozenset(merged),
            features=self._x_full,
            labels=labels,
            num_labels=g.num_labels,
            validate=False,
        )


def export_poisoned(
    env: PoisonEnv, state: PoisonState, path: str | Path, seeds: dict | None = None
) -> None:
    """Write the merged graph plus an ``injected.json`` manifest."""
    d = Path(path)
    save_graph(env.to_graph(state), d)
    manifest = {
        "num_injected": state.num_injected,
        "adv_labels": [int(x) for x in state.adv_labels],
        "adv_edges": [[int(u), int(v)] for u, v in state.adv_edges],
        "config": {
            "r": env.cfg.r,
            "deg_inject": env.cfg.deg_inject,
            "gamma": env.cfg.gamma,
            "surrogate_epochs": env.cfg.surrogate_epochs,
            "budget": env.budget,
        },
        "seeds": dict(seeds or {}),
    }
    (d / "injected.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def load_poisoned(path: str | Path) -> tuple[Graph, dict]:
    """(merged poisoned graph, injected.json manifest)."""
    d = Path(path)
    g = load_graph(d)
    manifest = json.loads((d / "injected.json").read_text())
    return g, manifest
