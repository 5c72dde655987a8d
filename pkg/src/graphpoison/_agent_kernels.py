"""Optional numba kernels for the agent's batched neighbor sums.

Each snapshot in a minibatch contributes a handful of adversarial edges on
top of the shared clean adjacency.  Routing those contributions through
per-snapshot scipy matrices costs more in call dispatch than in work, so
these kernels scatter the edge contributions directly.  ``edges`` holds
the concatenated adversarial edges of all snapshots and ``seg`` the
[S + 1] segment boundaries.
"""

from __future__ import annotations

from numba import njit

__all__ = ["adv_scatter_shared", "adv_scatter_block", "adv_scatter_reduce"]


@njit(cache=True)
def adv_scatter_shared(edges, seg, m_shared, out, nt):
    """out[s-block] += A_adv(s) @ m_shared for every snapshot s."""
    d = m_shared.shape[1]
    for s in range(seg.shape[0] - 1):
        off = s * nt
        for e in range(seg[s], seg[s + 1]):
            u = edges[e, 0]
            v = edges[e, 1]
            for c in range(d):
                out[off + u, c] += m_shared[v, c]
                out[off + v, c] += m_shared[u, c]


@njit(cache=True)
def adv_scatter_block(edges, seg, m_big, out, nt):
    """out[s-block] += A_adv(s) @ m_big[s-block] for every snapshot s."""
    d = m_big.shape[1]
    for s in range(seg.shape[0] - 1):
        off = s * nt
        for e in range(seg[s], seg[s + 1]):
            u = edges[e, 0]
            v = edges[e, 1]
            for c in range(d):
                out[off + u, c] += m_big[off + v, c]
                out[off + v, c] += m_big[off + u, c]


@njit(cache=True)
def adv_scatter_reduce(edges, seg, dp, acc, nt):
    """acc += sum_s A_adv(s) @ dp[s-block], accumulated on the shared rows."""
    d = dp.shape[1]
    for s in range(seg.shape[0] - 1):
        off = s * nt
        for e in range(seg[s], seg[s + 1]):
            u = edges[e, 0]
            v = edges[e, 1]
            for c in range(d):
                acc[u, c] += dp[off + v, c]
                acc[v, c] += dp[off + u, c]
