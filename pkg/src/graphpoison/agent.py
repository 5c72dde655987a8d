"""Hierarchical Q-learning attacker.

Three Q-heads score the levels of one poisoning move (pick injected node,
pick partner, pick label); all three share the state encoder from
:mod:`graphpoison.embedding` and are trained jointly from clipped TD
errors against periodically synced target heads.  Minibatches recompute
state embeddings from transition snapshots, stacked block-diagonally so a
couple of sparse products serve the whole batch, and candidate scoring
splits the first MLP layer into per-input blocks to avoid materializing
tiled inputs.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .embedding import (
    AGG,
    LIFT,
    EmbeddingParams,
    all_label_embeddings,
    encode_label_backward,
    encode_label_input,
    label_histogram,
)
from .env import AttackConfig, HierAction, PoisonEnv, PoisonState
from .errors import ConfigError, InvalidActionError, ShapeError
from .gcn import TrainConfig
from .graph import Graph, SplitSpec, adjacency_csr
from .numerics import ParamSet, adam_step, glorot_init, load_checkpoint, save_checkpoint
from .rng import derive_rng, derive_seed

try:  # optional compiled scatter kernels; see _agent_kernels
    from ._agent_kernels import adv_scatter_block, adv_scatter_reduce, adv_scatter_shared
except ImportError:  # pragma: no cover - depends on the environment
    adv_scatter_block = adv_scatter_reduce = adv_scatter_shared = None

__all__ = [
    "AgentConfig",
    "QHeads",
    "Transition",
    "ReplayBuffer",
    "AttackAgent",
    "AttackResult",
    "train_attack",
    "q1_score",
    "q2_score",
    "q3_score",
    "save_agent_checkpoint",
    "restore_agent_checkpoint",
]

_HEADS = ("q1", "q2", "q3")


@dataclass(frozen=True)
class AgentConfig:
    """Q-learning schedule and architecture sizes."""

    episodes: int = 200
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int | None = None  # None -> half the total env steps
    replay_capacity: int = 10_000
    batch_size: int = 32
    target_sync_c: int = 50
    lr: float = 1e-3
    gamma: float | None = None  # None -> AttackConfig.gamma
    embed_dim: int = 64
    label_hidden: int = 32
    msg_rounds: int = 2
    q_hidden: int = 64

    def __post_init__(self) -> None:
        if not (0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0):
            raise ConfigError(
                f"need 0 <= epsilon_end <= epsilon_start <= 1, got "
                f"({self.epsilon_start}, {self.epsilon_end})"
            )
        if self.batch_size > self.replay_capacity:
            raise ConfigError("batch_size cannot exceed replay_capacity")


@dataclass
class QHeads:
    """Online weights for the three heads plus their target copies.

    Head k scores concatenated vectors through W1 . relu(W2 . z).  The
    shared embedding parameters live in the same ParamSet so one adam step
    updates everything; targets cover the head weights only.
    """

    params: ParamSet
    emb: EmbeddingParams
    q_hidden: int
    target: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def create(
        cls,
        feat_dim: int,
        num_labels: int,
        dim: int = 64,
        label_hidden: int = 32,
        rounds: int = 2,
        q_hidden: int = 64,
        seed: int = 0,
    ) -> "QHeads":
        params = ParamSet()
        emb = EmbeddingParams.create(
            feat_dim,
            num_labels,
            dim=dim,
            label_hidden=label_hidden,
            rounds=rounds,
            seed=derive_seed(seed, "emb"),
            params=params,
        )
        widths = {"q1": 3 * dim, "q2": 4 * dim, "q3": 4 * dim}
        for name, width in widths.items():
            params.add(f"{name}_w2", glorot_init(width, q_hidden, derive_seed(seed, name, "w2")))
            params.add(f"{name}_w1", glorot_init(q_hidden, 1, derive_seed(seed, name, "w1")))
        heads = cls(params=params, emb=emb, q_hidden=q_hidden)
        heads.sync_target()
        return heads

    def weights(self, head: str, use_target: bool = False) -> tuple[np.ndarray, np.ndarray]:
        src = self.target if use_target else self.params
        return src[f"{head}_w2"], src[f"{head}_w1"]

    def sync_target(self) -> None:
        for head in _HEADS:
            for w in ("w1", "w2"):
                self.target[f"{head}_{w}"] = self.params[f"{head}_{w}"].copy()


def _mlp_scores(z: np.ndarray, w2: np.ndarray, w1: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rows of z through the two-layer scorer; returns (scores, pre-activation)."""
    if z.shape[1] != w2.shape[0]:
        raise ShapeError(f"score input width {z.shape[1]} != weight rows {w2.shape[0]}")
    pre = z @ w2
    return (np.maximum(pre, 0.0) @ w1).ravel(), pre


def q1_score(state_vec: np.ndarray, node_vec: np.ndarray, heads: QHeads) -> float:
    """Level-1 score of picking one injected node in the given state."""
    d = heads.emb.dim
    if state_vec.shape != (2 * d,) or node_vec.shape != (d,):
        raise ShapeError(
            f"q1_score expects state (2*{d},) and node ({d},), got "
            f"{state_vec.shape} and {node_vec.shape}"
        )
    z = np.concatenate([state_vec, node_vec])[None, :]
    return float(_mlp_scores(z, *heads.weights("q1"))[0][0])


def q2_score(
    state_vec: np.ndarray, node1_vec: np.ndarray, node2_vec: np.ndarray, heads: QHeads
) -> float:
    """Level-2 score of wiring the chosen injected node to a partner."""
    d = heads.emb.dim
    for v, name in ((node1_vec, "node1"), (node2_vec, "node2")):
        if v.shape != (d,):
            raise ShapeError(f"q2_score {name} must have shape ({d},), got {v.shape}")
    if state_vec.shape != (2 * d,):
        raise ShapeError(f"q2_score state must have shape ({2 * d},), got {state_vec.shape}")
    z = np.concatenate([state_vec, node1_vec, node2_vec])[None, :]
    return float(_mlp_scores(z, *heads.weights("q2"))[0][0])


def q3_score(
    state_vec: np.ndarray, node1_vec: np.ndarray, label_vec: np.ndarray, heads: QHeads
) -> float:
    """Level-3 score of relabeling the chosen injected node."""
    d = heads.emb.dim
    if state_vec.shape != (2 * d,) or node1_vec.shape != (d,) or label_vec.shape != (d,):
        raise ShapeError("q3_score operand shapes inconsistent with embedding dim")
    z = np.concatenate([state_vec, node1_vec, label_vec])[None, :]
    return float(_mlp_scores(z, *heads.weights("q3"))[0][0])


@dataclass(frozen=True)
class Transition:
    """One replayed step.

    The two immutable states are snapshots in themselves (poisoned edge
    list plus adversarial labels); recomputing their embeddings is
    deterministic, and their cached adjacency fragments are shared across
    replays.
    """

    state: PoisonState
    next_state: PoisonState
    action: HierAction
    reward: int
    terminal: bool


class ReplayBuffer:
    """Fixed-capacity ring with FIFO eviction and uniform sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError("replay capacity must be >= 1")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._next = 0

    def push(self, tr: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(tr)
        else:
            self._items[self._next] = tr
        self._next = (self._next + 1) % self.capacity

    def __len__(self) -> int:
        return len(self._items)

    def sample(self, rng: np.random.Generator, batch_size: int) -> list[Transition]:
        if not self._items:
            raise ConfigError("cannot sample from an empty replay buffer")
        size = min(batch_size, len(self._items))
        idx = rng.choice(len(self._items), size=size, replace=False)
        return [self._items[i] for i in idx]


@dataclass
class _Stack:
    """Forward caches for a stacked batch of state snapshots.

    Round 1 of the recursion does not depend on the snapshot (the zero
    initialization wipes the neighbor sums), so it is stored once as
    ``m1``; deeper rounds are per-snapshot stacks of shape [S * nt, d].
    ``edges``/``seg`` pack the snapshots' adversarial edges for the
    scatter kernels.
    """

    states: list[PoisonState]
    edges: np.ndarray  # concatenated adversarial edges [E, 2]
    seg: np.ndarray  # segment boundaries [S + 1]
    m1: np.ndarray  # [nt, d], shared by every snapshot
    ms: list[np.ndarray]  # rounds 2..K
    nbs: list[np.ndarray]  # neighbor sums feeding rounds 2..K
    hists: np.ndarray
    label_pre: np.ndarray
    state: np.ndarray  # [S, 2d]
    m_tiled: np.ndarray | None = None  # only materialized for 1-round encoders

    @property
    def size(self) -> int:
        return len(self.states)

    @property
    def m(self) -> np.ndarray:
        if self.ms:
            return self.ms[-1]
        assert self.m_tiled is not None
        return self.m_tiled


@dataclass
class _TakenQs:
    q1: np.ndarray
    q2: np.ndarray
    q3: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    z3: np.ndarray
    pre1: np.ndarray
    pre2: np.ndarray
    pre3: np.ndarray
    a1_rows: np.ndarray
    a2_rows: np.ndarray
    onehots: np.ndarray
    lab_pre: np.ndarray


@dataclass
class AttackResult:
    """Output of one attack training run."""

    best_state: PoisonState
    best_rate: float
    best_episode: int  # -1 means the final greedy rollout won
    initial_rate: float
    episode_rates: list[float]
    trace: list[dict]
    heads: QHeads


class AttackAgent:
    """Training loop and batched TD machinery for one environment."""

    def __init__(
        self,
        env: PoisonEnv,
        acfg: AgentConfig,
        seed: int,
        optimize_labels: bool = True,
    ):
        if env.num_injected < 1:
            raise ConfigError("attack needs at least one injected node")
        if env.budget < 1:
            raise ConfigError("attack needs an edge budget of at least 1")
        self.env = env
        self.acfg = acfg
        self.seed = seed
        self.optimize_labels = optimize_labels
        self.n_clean = env.graph.num_nodes
        self.k = env.num_injected
        self.n_total = self.n_clean + self.k
        self.num_labels = env.num_labels
        self.gamma = acfg.gamma if acfg.gamma is not None else env.cfg.gamma
        self.heads = QHeads.create(
            env.graph.feat_dim,
            env.num_labels,
            dim=acfg.embed_dim,
            label_hidden=acfg.label_hidden,
            rounds=acfg.msg_rounds,
            q_hidden=acfg.q_hidden,
            seed=derive_seed(seed, "init"),
        )
        self.clean_adj = adjacency_csr(self.n_total, env.clean_edge_array)
        self.x_full = env.x_full
        self.buffer = ReplayBuffer(acfg.replay_capacity)
        self.explore_rng = derive_rng(seed, "explore")
        self.replay_rng = derive_rng(seed, "replay")
        self.global_step = 0
        self.update_count = 0

    # -- stacked embedding forward/backward ---------------------------------

    @staticmethod
    def _pack_edges(states: list[PoisonState]) -> tuple[np.ndarray, np.ndarray]:
        seg = np.zeros(len(states) + 1, dtype=np.int64)
        for s, st in enumerate(states):
            seg[s + 1] = seg[s] + st.adv_edges.shape[0]
        if seg[-1] == 0:
            return np.zeros((0, 2), dtype=np.int64), seg
        edges = np.concatenate([st.adv_edges for st in states], axis=0)
        return np.ascontiguousarray(edges, dtype=np.int64), seg

    def _scatter_shared(self, stack_edges, seg, states, m_shared, out) -> None:
        nt = self.n_total
        if adv_scatter_shared is not None:
            if stack_edges.shape[0]:
                adv_scatter_shared(stack_edges, seg, m_shared, out, nt)
            return
        for s, st in enumerate(states):
            if st.adv_edges.shape[0]:
                out[s * nt : (s + 1) * nt] += st.adv_adj @ m_shared

    def _scatter_block(self, stack_edges, seg, states, m_big, out) -> None:
        nt = self.n_total
        if adv_scatter_block is not None:
            if stack_edges.shape[0]:
                adv_scatter_block(stack_edges, seg, m_big, out, nt)
            return
        for s, st in enumerate(states):
            if st.adv_edges.shape[0]:
                sl = slice(s * nt, (s + 1) * nt)
                out[sl] += st.adv_adj @ m_big[sl]

    def _scatter_reduce(self, stack_edges, seg, states, dp, acc) -> None:
        nt = self.n_total
        if adv_scatter_reduce is not None:
            if stack_edges.shape[0]:
                adv_scatter_reduce(stack_edges, seg, dp, acc, nt)
            return
        for s, st in enumerate(states):
            if st.adv_edges.shape[0]:
                acc += st.adv_adj @ dp[s * nt : (s + 1) * nt]

    def _stack_forward(self, states: list[PoisonState]) -> _Stack:
        size = len(states)
        nt = self.n_total
        emb = self.heads.emb
        p = self.heads.params
        d = emb.dim

        xl = self.x_full @ p[LIFT]
        agg = p[AGG]
        m1 = np.maximum(xl, 0.0)
        edges, seg = self._pack_edges(states)

        ms: list[np.ndarray] = []
        nbs: list[np.ndarray] = []
        if emb.rounds >= 2:
            base_nb = self.clean_adj @ m1
            nb = np.tile(base_nb, (size, 1))
            self._scatter_shared(edges, seg, states, m1, nb)
            nbs.append(nb)
            z = nb @ agg
            z.reshape(size, nt, d)[:] += xl[None, :, :]
            m = np.maximum(z, 0.0, out=z)
            ms.append(m)
            for _ in range(emb.rounds - 2):
                nb = np.empty_like(m)
                for s in range(size):
                    sl = slice(s * nt, (s + 1) * nt)
                    nb[sl] = self.clean_adj @ m[sl]
                self._scatter_block(edges, seg, states, m, nb)
                nbs.append(nb)
                z = nb @ agg
                z.reshape(size, nt, d)[:] += xl[None, :, :]
                m = np.maximum(z, 0.0, out=z)
                ms.append(m)
            m_tiled = None
            m_final = m
        else:
            m_tiled = np.tile(m1, (size, 1))
            m_final = m_tiled

        graph_vecs = m_final.reshape(size, nt, d).mean(axis=1)
        hists = np.stack(
            [label_histogram(st.adv_labels, self.num_labels) for st in states]
        )
        label_out, label_pre = encode_label_input(hists, emb)
        state = np.concatenate([graph_vecs, label_out], axis=1)
        return _Stack(
            states=states,
            edges=edges,
            seg=seg,
            m1=m1,
            ms=ms,
            nbs=nbs,
            hists=hists,
            label_pre=label_pre,
            state=state,
            m_tiled=m_tiled,
        )

    def _stack_backward(
        self,
        stack: _Stack,
        d_state: np.ndarray,
        node_rows: np.ndarray,
        node_grads: np.ndarray,
    ) -> None:
        emb = self.heads.emb
        p = self.heads.params
        d = emb.dim
        nt = self.n_total
        size = stack.size

        encode_label_backward(stack.hists, stack.label_pre, d_state[:, d:], emb)

        dm = np.empty((size * nt, d))
        dm.reshape(size, nt, d)[:] = (d_state[:, :d] / nt)[:, None, :]
        if node_rows.size:
            np.add.at(dm, node_rows, node_grads)

        agg = p[AGG]
        d_lift = p.grad(LIFT)
        d_agg = p.grad(AGG)
        mask1 = stack.m1 > 0.0
        for k in range(len(stack.ms) - 1, -1, -1):
            dz = dm * (stack.ms[k] > 0.0)
            d_lift += self.x_full.T @ dz.reshape(size, nt, d).sum(axis=0)
            d_agg += stack.nbs[k].T @ dz
            dp = dz @ agg.T
            if k > 0:
                dm = np.empty_like(dp)
                for s in range(size):
                    sl = slice(s * nt, (s + 1) * nt)
                    dm[sl] = self.clean_adj @ dp[sl]
                self._scatter_block(stack.edges, stack.seg, stack.states, dp, dm)
            else:
                # propagate into the shared first round in one reduced pass
                dsum = dp.reshape(size, nt, d).sum(axis=0)
                acc = self.clean_adj @ dsum
                self._scatter_reduce(stack.edges, stack.seg, stack.states, dp, acc)
                d_lift += self.x_full.T @ (acc * mask1)
                return
        # one-round encoder: every block feeds the shared round directly
        dz1 = dm.reshape(size, nt, d).sum(axis=0) * mask1
        d_lift += self.x_full.T @ dz1

    # -- scoring -------------------------------------------------------------

    def _candidate_scores(
        self,
        head: str,
        state_mat: np.ndarray,
        v1: np.ndarray | None,
        cand: np.ndarray,
        per_s: int,
        use_target: bool,
    ) -> np.ndarray:
        """Head scores of per-transition candidate sets, shape [S, per_s].

        The first MLP layer is applied blockwise: the state (and chosen
        node, for heads 2/3) contribute per-transition offsets while the
        candidate block multiplies ``cand`` directly, so candidate matrices
        are never tiled.  ``cand`` has ``S * per_s`` rows in transition-major
        order, or ``per_s`` rows shared by every transition.
        """
        w2, w1 = self.heads.weights(head, use_target)
        d = self.heads.emb.dim
        off = state_mat @ w2[: 2 * d]
        if v1 is not None:
            off = off + v1 @ w2[2 * d : 3 * d]
        cw = cand @ w2[-d:]
        size = state_mat.shape[0]
        if cw.shape[0] == per_s:
            pre = off[:, None, :] + cw[None, :, :]
        else:
            pre = cw.reshape(size, per_s, -1)
            pre += off[:, None, :]
        np.maximum(pre, 0.0, out=pre)
        return (pre.reshape(size * per_s, -1) @ w1).reshape(size, per_s)

    def _partner_counts(self, edges: np.ndarray) -> np.ndarray:
        counts = np.zeros(self.k, dtype=np.int64)
        if edges.shape[0]:
            flat = edges.ravel()
            inj = flat[flat >= self.n_clean] - self.n_clean
            counts = np.bincount(inj, minlength=self.k)
        return counts

    def _partners_of(self, edges: np.ndarray, global_idx: int) -> np.ndarray:
        if edges.shape[0] == 0:
            return np.zeros(0, dtype=np.int64)
        left = edges[edges[:, 0] == global_idx, 1]
        right = edges[edges[:, 1] == global_idx, 0]
        return np.concatenate([left, right])

    def select_action(self, state: PoisonState, epsilon: float) -> HierAction:
        """Epsilon-greedy hierarchical selection over the valid actions.

        Each level draws its own exploration coin; greedy levels take the
        masked argmax of their head (ties to the smallest index)."""
        env = self.env
        rng = self.explore_rng
        level1, _, _ = env.valid_action_mask(state)
        if not level1.any():
            raise InvalidActionError("no valid action: every injected node is saturated")

        stack = self._stack_forward([state])
        m = stack.m
        n = self.n_clean

        if rng.random() < epsilon:
            a1 = int(rng.choice(np.flatnonzero(level1)))
        else:
            scores = self._candidate_scores(
                "q1", stack.state, None, m[n : n + self.k], self.k, use_target=False
            )[0]
            scores[~level1] = -np.inf
            a1 = int(np.argmax(scores))

        _, level2, _ = env.valid_action_mask(state, a1)
        assert level2 is not None
        v1 = m[None, n + a1]
        if rng.random() < epsilon:
            a2 = int(rng.choice(np.flatnonzero(level2)))
        else:
            scores = self._candidate_scores(
                "q2", stack.state, v1, m, self.n_total, use_target=False
            )[0]
            scores[~level2] = -np.inf
            a2 = int(np.argmax(scores))

        if not self.optimize_labels:
            a3 = int(state.adv_labels[a1])
        elif rng.random() < epsilon:
            a3 = int(rng.integers(self.num_labels))
        else:
            labs = all_label_embeddings(self.heads.emb)
            scores = self._candidate_scores(
                "q3", stack.state, v1, labs, self.num_labels, use_target=False
            )[0]
            a3 = int(np.argmax(scores))

        return HierAction(a1=a1, a2=a2, a3=a3)

    def td_targets(self, batch: list[Transition]) -> np.ndarray:
        """Per-head regression targets, shape [batch, 3].

        Terminal transitions get the bare reward; the rest bootstrap with
        the target heads, maximizing hierarchically over the valid next
        actions (the greedy level-1 choice feeds levels 2 and 3).
        """
        y = np.array([[float(tr.reward)] * 3 for tr in batch])
        live = [i for i, tr in enumerate(batch) if not tr.terminal]
        if not live or self.gamma == 0.0:
            return y

        snaps = [batch[i].next_state for i in live]
        stack = self._stack_forward(snaps)
        m = stack.m
        nt = self.n_total
        n = self.n_clean
        ls = len(live)
        offs = np.arange(ls) * nt

        inj_rows = (offs[:, None] + n + np.arange(self.k)[None, :]).ravel()
        s1 = self._candidate_scores(
            "q1", stack.state, None, m[inj_rows], self.k, use_target=True
        )
        for j, st in enumerate(snaps):
            counts = self._partner_counts(st.adv_edges)
            s1[j, counts >= nt - 1] = -np.inf
        a1 = np.argmax(s1, axis=1)
        max1 = s1[np.arange(ls), a1]

        v1 = m[offs + n + a1]
        s2 = self._candidate_scores("q2", stack.state, v1, m, nt, use_target=True)
        for j, st in enumerate(snaps):
            g1 = n + int(a1[j])
            s2[j, g1] = -np.inf
            partners = self._partners_of(st.adv_edges, g1)
            if partners.size:
                s2[j, partners] = -np.inf
        max2 = s2.max(axis=1)

        labs = all_label_embeddings(self.heads.emb)
        s3 = self._candidate_scores("q3", stack.state, v1, labs, self.num_labels, use_target=True)
        max3 = s3.max(axis=1)

        for j, i in enumerate(live):
            r = batch[i].reward
            y[i, 0] = r + self.gamma * max1[j]
            y[i, 1] = r + self.gamma * max2[j]
            y[i, 2] = r + self.gamma * max3[j]
        return y

    def _current_qs(self, stack: _Stack, batch: list[Transition]) -> _TakenQs:
        m = stack.m
        nt = self.n_total
        n = self.n_clean
        offs = np.arange(stack.size) * nt
        a1_rows = offs + n + np.array([tr.action.a1 for tr in batch])
        a2_rows = offs + np.array([tr.action.a2 for tr in batch])

        z1 = np.concatenate([stack.state, m[a1_rows]], axis=1)
        q1, pre1 = _mlp_scores(z1, *self.heads.weights("q1"))
        z2 = np.concatenate([stack.state, m[a1_rows], m[a2_rows]], axis=1)
        q2, pre2 = _mlp_scores(z2, *self.heads.weights("q2"))

        onehots = np.zeros((stack.size, self.num_labels))
        onehots[np.arange(stack.size), [tr.action.a3 for tr in batch]] = 1.0
        lab_out, lab_pre = encode_label_input(onehots, self.heads.emb)
        z3 = np.concatenate([stack.state, m[a1_rows], lab_out], axis=1)
        q3, pre3 = _mlp_scores(z3, *self.heads.weights("q3"))

        return _TakenQs(
            q1=q1, q2=q2, q3=q3,
            z1=z1, z2=z2, z3=z3,
            pre1=pre1, pre2=pre2, pre3=pre3,
            a1_rows=a1_rows, a2_rows=a2_rows,
            onehots=onehots, lab_pre=lab_pre,
        )

    def _head_backward(
        self, head: str, z: np.ndarray, pre: np.ndarray, dq: np.ndarray
    ) -> np.ndarray:
        p = self.heads.params
        w2, w1 = self.heads.weights(head)
        h = np.maximum(pre, 0.0)
        p.grad(f"{head}_w1")[...] += h.T @ dq[:, None]
        dpre = (dq[:, None] @ w1.T) * (pre > 0.0)
        p.grad(f"{head}_w2")[...] += z.T @ dpre
        return dpre @ w2.T

    def _backward_taken(
        self, stack: _Stack, cur: _TakenQs, dq: np.ndarray, train_labels: bool
    ) -> None:
        """Backprop d(loss)/d(q_head) = dq[:, head] through everything."""
        d = self.heads.emb.dim
        dz1 = self._head_backward("q1", cur.z1, cur.pre1, dq[:, 0])
        dz2 = self._head_backward("q2", cur.z2, cur.pre2, dq[:, 1])
        d_state = dz1[:, : 2 * d] + dz2[:, : 2 * d]
        dn_a1 = dz1[:, 2 * d :] + dz2[:, 2 * d : 3 * d]
        dn_a2 = dz2[:, 3 * d :]
        if train_labels:
            dz3 = self._head_backward("q3", cur.z3, cur.pre3, dq[:, 2])
            d_state += dz3[:, : 2 * d]
            dn_a1 += dz3[:, 2 * d : 3 * d]
            encode_label_backward(cur.onehots, cur.lab_pre, dz3[:, 3 * d :], self.heads.emb)

        rows = np.concatenate([cur.a1_rows, cur.a2_rows])
        grads = np.concatenate([dn_a1, dn_a2], axis=0)
        self._stack_backward(stack, d_state, rows, grads)

    def update(self, batch: list[Transition]) -> float:
        """One TD step on all heads; returns the mean clipped squared error."""
        p = self.heads.params
        p.zero_grads()
        y = self.td_targets(batch)
        stack = self._stack_forward([tr.state for tr in batch])
        cur = self._current_qs(stack, batch)
        qs = np.stack([cur.q1, cur.q2, cur.q3], axis=1)
        err = np.clip(y - qs, -1.0, 1.0)
        if not self.optimize_labels:
            err[:, 2] = 0.0
        dq = -err / len(batch)
        self._backward_taken(stack, cur, dq, train_labels=self.optimize_labels)
        adam_step(p, self.acfg.lr)
        self.update_count += 1
        if self.update_count % self.acfg.target_sync_c == 0:
            self.heads.sync_target()
        return float(np.mean(err**2))

    def taken_q_for_check(self, tr: Transition, head: int) -> float:
        """One taken-action Q value with its full analytic gradient.

        Used by the finite-difference harness: zeroes the gradients, runs
        the production forward, and backprops d(q)/d(params) for the given
        head (1, 2 or 3).
        """
        self.heads.params.zero_grads()
        stack = self._stack_forward([tr.state])
        cur = self._current_qs(stack, [tr])
        dq = np.zeros((1, 3))
        dq[0, head - 1] = 1.0
        self._backward_taken(stack, cur, dq, train_labels=True)
        return float((cur.q1, cur.q2, cur.q3)[head - 1][0])

    # -- training loop -------------------------------------------------------

    def epsilon_at(self, step: int) -> float:
        a = self.acfg
        total = a.epsilon_decay_steps
        if total is None:
            total = max(1, (a.episodes * self.env.budget) // 2)
        if total <= 0:
            return a.epsilon_end
        frac = min(1.0, step / total)
        return a.epsilon_start + (a.epsilon_end - a.epsilon_start) * frac

    def _play_episode(
        self, label_seed: int, epsilon_fn, episode_id: int, trace: list[dict]
    ) -> tuple[PoisonState, float]:
        """One full episode; returns (terminal state, terminal rate)."""
        env = self.env
        state = env.reset(label_seed)
        rate = env.initial_success_rate()
        learn = epsilon_fn is not None
        for t in range(env.budget):
            eps = epsilon_fn(self.global_step) if learn else 0.0
            act = self.select_action(state, eps)
            nxt, reward, next_rate, terminal = env.step(state, act, rate)
            if learn:
                self.buffer.push(
                    Transition(
                        state=state,
                        next_state=nxt,
                        action=act,
                        reward=reward,
                        terminal=terminal,
                    )
                )
                self.update(self.buffer.sample(self.replay_rng, self.acfg.batch_size))
                self.global_step += 1
            trace.append(
                {
                    "episode": episode_id,
                    "step": t,
                    "action": [act.a1, act.a2, act.a3],
                    "reward": reward,
                    "success_rate": next_rate,
                }
            )
            state, rate = nxt, next_rate
        return state, rate

    def run(self) -> AttackResult:
        """K learning episodes, then a greedy rollout; the terminal state
        with the best validation success rate wins."""
        initial_rate = self.env.initial_success_rate()
        trace: list[dict] = []
        episode_rates: list[float] = []
        best_state: PoisonState | None = None
        best_rate = -np.inf
        best_episode = -2

        for ep in range(self.acfg.episodes):
            label_seed = derive_seed(self.seed, "labels", ep)
            state, rate = self._play_episode(label_seed, self.epsilon_at, ep, trace)
            episode_rates.append(rate)
            if rate > best_rate:
                best_state, best_rate, best_episode = state, rate, ep

        rollout_seed = derive_seed(self.seed, "labels", self.acfg.episodes)
        state, rate = self._play_episode(rollout_seed, None, self.acfg.episodes, trace)
        if rate > best_rate:
            best_state, best_rate, best_episode = state, rate, -1

        assert best_state is not None
        return AttackResult(
            best_state=best_state,
            best_rate=float(best_rate),
            best_episode=best_episode,
            initial_rate=initial_rate,
            episode_rates=episode_rates,
            trace=trace,
            heads=self.heads,
        )


def train_attack(
    g: Graph,
    split: SplitSpec,
    cfg: AttackConfig,
    acfg: AgentConfig,
    seed: int,
    surrogate_cfg: TrainConfig | None = None,
    optimize_labels: bool = True,
) -> tuple[PoisonState, AttackResult]:
    """Train the hierarchical attacker and return its best poisoned state.

    ``optimize_labels=False`` freezes every injected node's label at its
    episode-reset draw (the label head stays untrained).
    """
    env = PoisonEnv(g, cfg, split, surrogate_cfg)
    agent = AttackAgent(env, acfg, seed, optimize_labels=optimize_labels)
    result = agent.run()
    return result.best_state, result


def save_agent_checkpoint(agent: AttackAgent, path: str | Path) -> None:
    """All head and embedding weights (online and target) plus a JSON
    sidecar holding the agent config, seed, counters, and RNG states."""
    values = agent.heads.params.copy_values()
    for key, arr in agent.heads.target.items():
        values[f"target_{key}"] = arr
    p = Path(path)
    save_checkpoint(values, p)
    sidecar = {
        "config": asdict(agent.acfg),
        "seed": agent.seed,
        "optimize_labels": agent.optimize_labels,
        "global_step": agent.global_step,
        "update_count": agent.update_count,
        "rng": {
            "explore": agent.explore_rng.bit_generator.state,
            "replay": agent.replay_rng.bit_generator.state,
        },
    }
    p.with_suffix(p.suffix + ".meta.json").write_text(
        json.dumps(sidecar, sort_keys=True, indent=2, default=int) + "\n"
    )


def restore_agent_checkpoint(agent: AttackAgent, path: str | Path) -> None:
    """Load weights, counters, and RNG states saved by
    :func:`save_agent_checkpoint` into a structurally matching agent."""
    p = Path(path)
    values = load_checkpoint(p)
    online = {k: v for k, v in values.items() if not k.startswith("target_")}
    agent.heads.params.set_values(online)
    for key in list(agent.heads.target):
        agent.heads.target[key] = values[f"target_{key}"]
    meta = json.loads(p.with_suffix(p.suffix + ".meta.json").read_text())
    agent.global_step = int(meta["global_step"])
    agent.update_count = int(meta["update_count"])
    agent.explore_rng.bit_generator.state = meta["rng"]["explore"]
    agent.replay_rng.bit_generator.state = meta["rng"]["replay"]
