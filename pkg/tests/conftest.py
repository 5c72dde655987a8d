"""Shared fixtures and dataset discovery for the test suite."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

from graphpoison.graph import Graph, sbm_generate

# Keep small-matrix numerics on one BLAS thread; the sizes here lose time
# to thread synchronization otherwise.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")


def dataset_dir(name: str) -> Path | None:
    """Locate a real benchmark dataset; tests skip when absent."""
    root = os.environ.get("GRAPHPOISON_DATA", str(Path(__file__).resolve().parent.parent / "data"))
    p = Path(root) / name
    return p if (p / "meta.json").is_file() else None


def small_graph(edges, n=None, num_labels=2, feat_dim=3, seed=0) -> Graph:
    """Tiny deterministic graph helper for hand-built fixtures."""
    n = n if n is not None else (max((max(e) for e in edges), default=-1) + 1)
    rng = np.random.default_rng(seed)
    return Graph(
        num_nodes=n,
        edges=frozenset(tuple(sorted(e)) for e in edges),
        features=rng.standard_normal((n, feat_dim)),
        labels=rng.integers(0, num_labels, size=n),
        num_labels=num_labels,
    )


@pytest.fixture(scope="session")
def sbm200() -> Graph:
    """The desk-scale block-model fixture used across the suite."""
    return sbm_generate(2, 100, 0.1, 0.01, feat_dim=8, feat_signal=1.0, seed=0)


@pytest.fixture(scope="session")
def sbm_small() -> Graph:
    """A 40-node fixture for the slower per-step machinery."""
    return sbm_generate(2, 20, 0.3, 0.05, feat_dim=6, feat_signal=1.0, seed=1)
