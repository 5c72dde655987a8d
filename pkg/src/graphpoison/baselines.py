"""Comparison attackers run at the same injection budget.

* random: Erdos-Renyi wiring among injected nodes at the clean graph's
  density, then uniform injected-to-clean edges up to the budget.
* preferential: partners sampled proportionally to current degree + 1.
* fga: greedy edge flips guided by the analytic gradient of the surrogate
  training loss with respect to adjacency entries, warm-started from the
  preferential attack.
* label-frozen agent: the full Q-learning attacker with label moves
  disabled, isolating the value of label optimization.

All of them only ever touch edges with at least one injected endpoint.
"""

from __future__ import annotations

import numpy as np

from .agent import AgentConfig, AttackResult, train_attack
from .env import AttackConfig, PoisonEnv, PoisonState
from .errors import ConfigError, SamplingStuckError
from .gcn import TrainConfig, normalized_adjacency_from_edges, train_core
from .graph import Graph, SplitSpec
from .numerics import cross_entropy, relu_forward
from .rng import derive_rng

__all__ = [
    "random_attack",
    "preferential_attack",
    "fga_attack",
    "nipa_without_labels",
    "adjacency_loss_gradient",
]


def _random_labels(env: PoisonEnv, seed: int) -> np.ndarray:
    return derive_rng(seed, "baseline-labels").integers(
        0, env.num_labels, size=env.num_injected, dtype=np.int64
    )


def random_attack(g: Graph, cfg: AttackConfig, seed: int) -> PoisonState:
    """Density-matched random wiring.

    Phase 1 wires injected-injected pairs independently with
    p = 2|E| / |V|^2 (the clean density); phase 2 adds uniform
    injected-clean edges until exactly the budget is reached, dropping
    phase-1 surplus uniformly if needed.
    """
    env = PoisonEnv(g, cfg)
    n, k, budget = g.num_nodes, env.num_injected, env.budget
    rng = derive_rng(seed, "random-attack")
    labels = _random_labels(env, seed)

    p = 2.0 * g.num_edges / (n * n)
    pairs = [(n + i, n + j) for i in range(k) for j in range(i + 1, k)]
    edges: list[tuple[int, int]] = [pair for pair in pairs if rng.random() < p]

    if len(edges) > budget:
        keep = rng.choice(len(edges), size=budget, replace=False)
        edges = [edges[i] for i in sorted(keep)]
    else:
        present = set(edges)
        needed = budget - len(edges)
        if needed > k * n:
            raise ConfigError(
                f"budget {env.budget} cannot be met with {k} injected and {n} clean nodes"
            )
        while needed > 0:
            inj = int(rng.integers(k))
            tgt = int(rng.integers(n))
            key = (tgt, n + inj)
            if key in present:
                continue
            present.add(key)
            edges.append((n + inj, tgt))
            needed -= 1

    arr = np.array(edges, dtype=np.int64).reshape(len(edges), 2)
    return PoisonState(
        num_clean=n,
        injected_features=env.injected_features,
        adv_edges=arr,
        adv_labels=labels,
        steps_taken=len(edges),
    )


def preferential_attack(g: Graph, cfg: AttackConfig, seed: int) -> PoisonState:
    """Degree-proportional wiring with +1 smoothing.

    Each step picks an injected node uniformly, then a partner from all
    nodes with probability proportional to its current degree + 1
    (smoothing keeps isolated injected nodes reachable), rejecting
    duplicates and self-loops.
    """
    env = PoisonEnv(g, cfg)
    n, k, budget = g.num_nodes, env.num_injected, env.budget
    rng = derive_rng(seed, "preferential-attack")
    labels = _random_labels(env, seed)

    n_total = n + k
    deg = np.zeros(n_total, dtype=np.float64)
    deg[:n] = g.degrees
    present: set[tuple[int, int]] = set()
    partner_count = np.zeros(k, dtype=np.int64)
    edges: list[tuple[int, int]] = []

    while len(edges) < budget:
        open_inj = np.flatnonzero(partner_count < n_total - 1)
        if open_inj.size == 0:
            raise SamplingStuckError("all injected nodes have exhausted their partners")
        inj = int(open_inj[rng.integers(open_inj.size)])
        g1 = n + inj
        weights = deg + 1.0
        weights[g1] = 0.0
        for _ in range(64):
            tgt = int(rng.choice(n_total, p=weights / weights.sum()))
            key = (g1, tgt) if g1 < tgt else (tgt, g1)
            if key not in present:
                break
            weights[tgt] = 0.0
            if weights.sum() <= 0.0:
                raise SamplingStuckError(f"injected node {inj} has no remaining partner")
        else:
            raise SamplingStuckError(f"rejection sampling stalled for injected node {inj}")
        present.add(key)
        edges.append((g1, tgt))
        deg[g1] += 1.0
        deg[tgt] += 1.0
        partner_count[inj] += 1
        if tgt >= n:
            partner_count[tgt - n] += 1

    arr = np.array(edges, dtype=np.int64).reshape(len(edges), 2)
    return PoisonState(
        num_clean=n,
        injected_features=env.injected_features,
        adv_edges=arr,
        adv_labels=labels,
        steps_taken=len(edges),
    )


def adjacency_loss_gradient(
    num_nodes: int,
    edge_array: np.ndarray,
    x: np.ndarray,
    labels: np.ndarray,
    labeled_idx: np.ndarray,
    w0: np.ndarray,
    w1: np.ndarray,
) -> np.ndarray:
    """d(training loss)/d(A_uv) for undirected edge toggles, dense [n, n].

    Chains through the symmetric normalization: perturbing A_uv moves the
    normalized entries (u,v) and (v,u) directly and rescales both nodes'
    rows and columns through their degrees.
    """
    adj = normalized_adjacency_from_edges(num_nodes, edge_array)
    deg_hat = np.bincount(edge_array.ravel(), minlength=num_nodes).astype(np.float64) + 1.0

    xw = x @ w0
    h1 = adj @ xw
    h1r = relu_forward(h1)
    hw = h1r @ w1
    logits = adj @ hw
    _, grad_logits = cross_entropy(logits, labels, labeled_idx)

    # dL/dA_hat = G (H1r W1)^T + [A_hat^T G W1^T * relu'] (X W0)^T
    s = grad_logits @ hw.T
    dh1 = ((adj @ grad_logits) @ w1.T) * (h1 > 0.0)
    s += dh1 @ xw.T

    a_dense = adj.toarray()
    t = s * a_dense
    w = (t.sum(axis=1) + t.sum(axis=0)) / (2.0 * deg_hat)
    inv_sqrt = 1.0 / np.sqrt(deg_hat)
    direct = (s + s.T) * np.outer(inv_sqrt, inv_sqrt)
    return direct - w[:, None] - w[None, :]


def fga_attack(
    g: Graph,
    cfg: AttackConfig,
    split: SplitSpec,
    surrogate_cfg: TrainConfig | None = None,
    seed: int = 0,
) -> PoisonState:
    """Gradient-guided edge flips, 20x budget modifications in total.

    Starts from the preferential attack, then repeatedly retrains the
    surrogate and either adds the absent injected-incident edge with the
    largest positive loss gradient or removes the present adversarial edge
    with the most negative one, whichever magnitude wins.  Adds are
    blocked while at budget, so a remove must free the slot first.
    """
    env = PoisonEnv(g, cfg, split, surrogate_cfg)
    state = preferential_attack(g, cfg, seed)
    n, k, budget = g.num_nodes, env.num_injected, env.budget
    n_total = n + k
    x = env.x_full
    labels_full = np.concatenate([g.labels, state.adv_labels])
    labeled = np.concatenate([split.train_array, np.arange(n, n_total)])
    clean_edges = g.edge_array

    adv: list[tuple[int, int]] = [
        (int(u), int(v)) if u < v else (int(v), int(u)) for u, v in state.adv_edges
    ]
    present = set(adv)

    for _ in range(20 * budget):
        edges = np.vstack([clean_edges, np.array(sorted(present), dtype=np.int64).reshape(-1, 2)])
        adj = normalized_adjacency_from_edges(n_total, edges)
        params, _ = train_core(
            adj, x, labels_full, g.num_labels, labeled, split.validation_array, env.surrogate_cfg
        )
        grad = adjacency_loss_gradient(
            n_total, edges, x, labels_full, labeled, params["W0"], params["W1"]
        )

        # candidate adds: absent pairs with an injected endpoint
        best_add = None
        if len(present) < budget:
            cand = grad[n:, :].copy()  # rows: injected, cols: all nodes
            for i in range(k):
                cand[i, n + i] = -np.inf
            for (u, v) in present:
                if u >= n:
                    cand[u - n, v] = -np.inf
                if v >= n:
                    cand[v - n, u] = -np.inf
            flat = int(np.argmax(cand))
            i, j = divmod(flat, n_total)
            if np.isfinite(cand[i, j]):
                best_add = (float(cand[i, j]), (n + i, j) if n + i < j else (j, n + i))

        best_rem = None
        if present:
            rem_list = sorted(present)
            vals = np.array([grad[u, v] for u, v in rem_list])
            idx = int(np.argmin(vals))
            best_rem = (float(vals[idx]), rem_list[idx])

        take_add = best_add is not None and (
            best_rem is None or best_add[0] >= -best_rem[0]
        )
        if take_add:
            present.add(best_add[1])
        elif best_rem is not None:
            present.discard(best_rem[1])
        else:  # no adversarial edges and at budget 0: nothing to do
            break

    arr = np.array(sorted(present), dtype=np.int64).reshape(len(present), 2)
    return PoisonState(
        num_clean=n,
        injected_features=env.injected_features,
        adv_edges=arr,
        adv_labels=state.adv_labels,
        steps_taken=len(present),
    )


def nipa_without_labels(
    g: Graph,
    split: SplitSpec,
    cfg: AttackConfig,
    acfg: AgentConfig,
    seed: int,
    surrogate_cfg: TrainConfig | None = None,
) -> tuple[PoisonState, AttackResult]:
    """The hierarchical attacker with labels frozen at their reset draws."""
    return train_attack(
        g, split, cfg, acfg, seed, surrogate_cfg=surrogate_cfg, optimize_labels=False
    )

