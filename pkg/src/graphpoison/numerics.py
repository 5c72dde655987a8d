"""Minimal dense numerics used by every learner in the package.

Matrices are plain float64 numpy arrays (row-major).  Backward passes are
written out explicitly rather than taped, and every one of them is held to
a central finite-difference oracle in the tests.  The normalized adjacency
used by the classifiers lives in scipy CSR form; everything else is dense.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import NonFiniteError, ShapeError
from .rng import derive_rng

__all__ = [
    "ParamSet",
    "glorot_init",
    "relu_forward",
    "relu_backward",
    "matmul_forward",
    "matmul_backward",
    "softmax_rows",
    "cross_entropy",
    "adam_step",
    "finite_diff_check",
    "save_checkpoint",
    "load_checkpoint",
]


class ParamSet:
    """Named parameter matrices with gradient buffers and adam moments.

    Gradients and both moment buffers always mirror the parameter shapes
    and start at zero.  One ParamSet must only ever be updated from a
    single thread.
    """

    def __init__(self) -> None:
        self._values: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self._values:
            raise ValueError(f"parameter {name!r} already registered")
        v = np.ascontiguousarray(value, dtype=np.float64)
        self._values[name] = v
        self._grads[name] = np.zeros_like(v)
        self._m[name] = np.zeros_like(v)
        self._v[name] = np.zeros_like(v)

    def names(self) -> list[str]:
        return list(self._values)

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def zero_grads(self) -> None:
        for g in self._grads.values():
            g.fill(0.0)

    def num_coords(self) -> int:
        return sum(v.size for v in self._values.values())

    def copy_values(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self._values.items()}

    def set_values(self, values: dict[str, np.ndarray]) -> None:
        for k, v in values.items():
            if self._values[k].shape != v.shape:
                raise ShapeError(
                    f"checkpoint shape {v.shape} does not match parameter "
                    f"{k!r} shape {self._values[k].shape}"
                )
            self._values[k][...] = v


def glorot_init(rows: int, cols: int, seed: int) -> np.ndarray:
    """Uniform Glorot/Xavier init in +-sqrt(6 / (rows + cols))."""
    if rows < 1 or cols < 1:
        raise ShapeError(f"glorot_init needs positive dims, got ({rows}, {cols})")
    bound = np.sqrt(6.0 / (rows + cols))
    rng = derive_rng(seed, "glorot")
    return rng.uniform(-bound, bound, size=(rows, cols))


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Subgradient 0 at the kink."""
    return grad_out * (x > 0.0)


def matmul_forward(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"cannot multiply shapes {a.shape} @ {b.shape}")
    return a @ b


def matmul_backward(
    grad_out: np.ndarray, a: np.ndarray, b: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    return grad_out @ b.T, a.T @ grad_out


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(
    logits: np.ndarray, targets: np.ndarray, mask: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood over the masked rows.

    Returns the loss and its gradient with respect to the logits; rows
    outside the mask get a zero gradient.
    """
    mask = np.asarray(mask, dtype=np.int64)
    if mask.size == 0:
        raise ShapeError("cross_entropy mask must be nonempty")
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape[0] != logits.shape[0]:
        raise ShapeError(
            f"cross_entropy shapes disagree: logits {logits.shape}, targets {targets.shape}"
        )
    sub = logits[mask]
    shifted = sub - sub.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    picked = log_p[np.arange(mask.size), targets[mask]]
    loss = float(-picked.mean())

    grad = np.zeros_like(logits)
    p = np.exp(log_p)
    p[np.arange(mask.size), targets[mask]] -= 1.0
    grad[mask] = p / mask.size
    return loss, grad


def adam_step(
    params: ParamSet,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected adaptive-moment update; clears gradients afterward."""
    params.step_count += 1
    t = params.step_count
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name in params.names():
        g = params._grads[name]
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
        m = params._m[name]
        v = params._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        params._values[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        g.fill(0.0)


def finite_diff_check(
    f: Callable[[ParamSet], float],
    params: ParamSet,
    h: float = 1e-5,
    max_coords: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error of the analytic gradient against central differences.

    ``f`` must be pure and deterministic, return the scalar loss, and leave
    the matching analytic gradients in ``params`` (overwriting, not
    accumulating into, any previous contents).  When the parameter count
    exceeds ``max_coords``, a random subset of coordinates is probed.
    """
    f(params)
    analytic = {name: params.grad(name).copy() for name in params.names()}

    coords: list[tuple[str, int]] = []
    for name in params.names():
        coords.extend((name, i) for i in range(params[name].size))
    if len(coords) > max_coords:
        rng = derive_rng(seed, "fd-coords")
        picked = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in picked]

    worst = 0.0
    for name, flat in coords:
        value = params[name].reshape(-1)
        orig = value[flat]
        value[flat] = orig + h
        loss_plus = f(params)
        value[flat] = orig - h
        loss_minus = f(params)
        value[flat] = orig
        fd = (loss_plus - loss_minus) / (2.0 * h)
        an = analytic[name].reshape(-1)[flat]
        err = abs(fd - an) / max(abs(fd), abs(an), 1e-6)
        worst = max(worst, err)
    f(params)  # restore gradients consistent with the unperturbed point
    return worst


# -- checkpoints ------------------------------------------------------------


def save_checkpoint(values: ParamSet | dict[str, np.ndarray], path: str | Path) -> None:
    """Text checkpoint: name -> {shape, row-major data}, keys sorted.

    JSON float serialization round-trips float64 exactly, so save/load is
    lossless and byte-stable for identical inputs.
    """
    if isinstance(values, ParamSet):
        values = values.copy_values()
    payload = {
        name: {"shape": list(arr.shape), "data": [float(x) for x in np.ravel(arr)]}
        for name, arr in values.items()
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    payload = json.loads(Path(path).read_text())
    out = {}
    for name, entry in payload.items():
        arr = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        out[name] = arr
    return out
