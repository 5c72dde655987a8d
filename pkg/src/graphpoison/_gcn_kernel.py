"""Optional numba kernel for the GCN training loop.

The attack loop retrains the surrogate classifier after every environment
step, so this loop is by far the hottest code in the package.  The kernel
mirrors ``gcn.train_core`` exactly: full-batch adam on cross-entropy with
weight decay on the first layer, early stopping on validation loss with
best-weight restore.  Dense products go through np.dot (BLAS); only the
sparse products and elementwise chains are hand-rolled.

If numba is unavailable the import fails and gcn falls back to the pure
numpy implementation; both paths are cross-checked in the tests.
"""

from __future__ import annotations

import numpy as np
from numba import njit

__all__ = ["gcn_train_kernel"]


@njit(cache=True)
def _csr_mul_dense(indptr, indices, data, b, out):
    n, c = out.shape
    for i in range(n):
        for col in range(c):
            out[i, col] = 0.0
        for ptr in range(indptr[i], indptr[i + 1]):
            j = indices[ptr]
            v = data[ptr]
            for col in range(c):
                out[i, col] += v * b[j, col]


@njit(cache=True)
def gcn_train_kernel(
    indptr,
    indices,
    data,
    ax,
    labels,
    train_idx,
    val_idx,
    w0,
    w1,
    epochs,
    lr,
    weight_decay,
    patience,
):
    """Train in place; returns (best_w0, best_w1, status).

    status 0 = ok, 1 = non-finite loss (value stored in best_w0[0, 0] is
    then meaningless; caller raises).  Shapes: ax [n, f], w0 [f, h],
    w1 [h, L].
    """
    n = ax.shape[0]
    h = w0.shape[1]
    nl = w1.shape[1]
    beta1 = 0.9
    beta2 = 0.999
    eps = 1e-8

    m0 = np.zeros_like(w0)
    v0 = np.zeros_like(w0)
    m1 = np.zeros_like(w1)
    v1 = np.zeros_like(w1)

    h1 = np.zeros((n, h))
    h1r = np.zeros((n, h))
    ah = np.zeros((n, h))
    logits = np.zeros((n, nl))
    grad_logits = np.zeros((n, nl))
    g1 = np.zeros((n, nl))
    probs_row = np.zeros(nl)

    use_val = val_idx.shape[0] > 0
    best_val = np.inf
    best_w0 = w0.copy()
    best_w1 = w1.copy()
    wait = 0
    n_train = train_idx.shape[0]
    t = 0

    for _epoch in range(epochs):
        # forward
        h1[:] = np.dot(ax, w0)
        for i in range(n):
            for c in range(h):
                h1r[i, c] = h1[i, c] if h1[i, c] > 0.0 else 0.0
        _csr_mul_dense(indptr, indices, data, h1r, ah)
        logits[:] = np.dot(ah, w1)

        # masked cross-entropy (train) and validation loss
        train_loss = 0.0
        for i in range(n):
            for c in range(nl):
                grad_logits[i, c] = 0.0
        for idx in range(n_train):
            i = train_idx[idx]
            mx = logits[i, 0]
            for c in range(1, nl):
                if logits[i, c] > mx:
                    mx = logits[i, c]
            z = 0.0
            for c in range(nl):
                probs_row[c] = np.exp(logits[i, c] - mx)
                z += probs_row[c]
            for c in range(nl):
                probs_row[c] /= z
            train_loss += -np.log(max(probs_row[labels[i]], 1e-300))
            for c in range(nl):
                grad_logits[i, c] = probs_row[c] / n_train
            grad_logits[i, labels[i]] -= 1.0 / n_train
        train_loss /= n_train
        wd_term = 0.0
        for a in range(w0.shape[0]):
            for b in range(w0.shape[1]):
                wd_term += w0[a, b] * w0[a, b]
        train_loss += 0.5 * weight_decay * wd_term
        if not np.isfinite(train_loss):
            return best_w0, best_w1, 1

        if use_val:
            val_loss = 0.0
            for idx in range(val_idx.shape[0]):
                i = val_idx[idx]
                mx = logits[i, 0]
                for c in range(1, nl):
                    if logits[i, c] > mx:
                        mx = logits[i, c]
                z = 0.0
                for c in range(nl):
                    probs_row[c] = np.exp(logits[i, c] - mx)
                    z += probs_row[c]
                val_loss += -np.log(max(probs_row[labels[i]] / z, 1e-300))
            val_loss /= val_idx.shape[0]
            if val_loss < best_val:
                best_val = val_loss
                best_w0[:] = w0
                best_w1[:] = w1
                wait = 0
            else:
                wait += 1
                if wait > patience:
                    return best_w0, best_w1, 0

        # backward
        _csr_mul_dense(indptr, indices, data, grad_logits, g1)
        dw1 = np.dot(ah.T, grad_logits)
        dh1 = np.dot(g1, w1.T)
        for i in range(n):
            for c in range(h):
                if h1[i, c] <= 0.0:
                    dh1[i, c] = 0.0
        dw0 = np.dot(ax.T, dh1)
        for a in range(w0.shape[0]):
            for b in range(w0.shape[1]):
                dw0[a, b] += weight_decay * w0[a, b]

        # adam
        t += 1
        c1 = 1.0 - beta1**t
        c2 = 1.0 - beta2**t
        for a in range(w0.shape[0]):
            for b in range(w0.shape[1]):
                g = dw0[a, b]
                m0[a, b] = beta1 * m0[a, b] + (1.0 - beta1) * g
                v0[a, b] = beta2 * v0[a, b] + (1.0 - beta2) * g * g
                w0[a, b] -= lr * (m0[a, b] / c1) / (np.sqrt(v0[a, b] / c2) + eps)
        for a in range(w1.shape[0]):
            for b in range(w1.shape[1]):
                g = dw1[a, b]
                m1[a, b] = beta1 * m1[a, b] + (1.0 - beta1) * g
                v1[a, b] = beta2 * v1[a, b] + (1.0 - beta2) * g * g
                w1[a, b] -= lr * (m1[a, b] / c1) / (np.sqrt(v1[a, b] / c2) + eps)

    if use_val:
        # weights after the final update also compete for best-val
        h1[:] = np.dot(ax, w0)
        for i in range(n):
            for c in range(h):
                h1r[i, c] = h1[i, c] if h1[i, c] > 0.0 else 0.0
        _csr_mul_dense(indptr, indices, data, h1r, ah)
        logits[:] = np.dot(ah, w1)
        val_loss = 0.0
        for idx in range(val_idx.shape[0]):
            i = val_idx[idx]
            mx = logits[i, 0]
            for c in range(1, nl):
                if logits[i, c] > mx:
                    mx = logits[i, c]
            z = 0.0
            for c in range(nl):
                probs_row[c] = np.exp(logits[i, c] - mx)
                z += probs_row[c]
            val_loss += -np.log(max(probs_row[labels[i]] / z, 1e-300))
        val_loss /= val_idx.shape[0]
        if val_loss < best_val:
            best_w0[:] = w0
            best_w1[:] = w1
    else:
        best_w0[:] = w0
        best_w1[:] = w1
    return best_w0, best_w1, 0
