"""Experiment pipelines: clean baselines, attacks, sweeps, stats audit.

Every pipeline is seeded end to end and reports through
:class:`graphpoison.report.RunReport`.  Attack runs are strictly
decoupled from their evaluation: the attacker writes a poisoned-graph
export, and the reported accuracy comes from retraining the victim from
scratch on that export, so wiping all attack-time state and re-evaluating
reproduces the report bit for bit.

Seeds are independent and may run in parallel worker processes; results
are joined in seed order so the worker count never changes a report.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import gcn
from .agent import AgentConfig, train_attack
from .baselines import fga_attack, nipa_without_labels, preferential_attack, random_attack
from .env import AttackConfig, PoisonEnv, PoisonState, export_poisoned, load_poisoned
from .errors import ConfigError
from .graph import (
    Graph,
    graph_statistics,
    load_graph,
    random_split,
    sparsify,
)
from .report import METHODS, RunReport
from .rng import derive_seed

__all__ = [
    "ExperimentSettings",
    "run_clean",
    "run_attack",
    "sweep_degree",
    "sweep_sparsity",
    "audit_stats",
    "evaluate_export",
    "clean_subgraph",
]


@dataclass(frozen=True)
class ExperimentSettings:
    """Everything an attack run needs besides the graph and the method."""

    victim: gcn.TrainConfig = gcn.TrainConfig()
    surrogate: gcn.TrainConfig = gcn.TrainConfig(hidden_dim=8, lr=0.02, patience=10)
    agent: AgentConfig = AgentConfig()
    gamma: float = 0.9
    surrogate_epochs: int = 50
    eval_mode: str = "true-labels"
    workers: int = 1

    def config_dict(self) -> dict:
        d = {
            "victim": asdict(self.victim),
            "surrogate": asdict(self.surrogate),
            "agent": asdict(self.agent),
            "gamma": self.gamma,
            "surrogate_epochs": self.surrogate_epochs,
            "eval_mode": self.eval_mode,
        }
        return d


def clean_subgraph(poisoned: Graph, num_injected: int) -> Graph:
    """Recover the clean graph from a poisoned export.

    Adversarial edges always touch an injected node, so the clean part is
    exactly the induced subgraph on the first n - k indices.
    """
    n_clean = poisoned.num_nodes - num_injected
    edges = frozenset(
        (u, v) for (u, v) in poisoned.edges if u < n_clean and v < n_clean
    )
    return Graph(
        num_nodes=n_clean,
        edges=edges,
        features=poisoned.features[:n_clean],
        labels=poisoned.labels[:n_clean],
        num_labels=poisoned.num_labels,
        validate=False,
    )


def _filtered_poisoned_arrays(
    poisoned: Graph, num_injected: int
) -> tuple[int, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Drop isolated injected nodes; clean indices stay in place."""
    n_clean = poisoned.num_nodes - num_injected
    deg = poisoned.degrees
    kept = np.flatnonzero(deg[n_clean:] > 0)
    remap = np.full(poisoned.num_nodes, -1, dtype=np.int64)
    remap[:n_clean] = np.arange(n_clean)
    remap[n_clean + kept] = n_clean + np.arange(kept.shape[0])
    ea = poisoned.edge_array
    edges = remap[ea] if ea.shape[0] else ea
    keep_nodes = np.concatenate([np.arange(n_clean), n_clean + kept])
    x = poisoned.features[keep_nodes]
    labels = poisoned.labels[keep_nodes]
    extra = np.arange(n_clean, n_clean + kept.shape[0], dtype=np.int64)
    return n_clean + kept.shape[0], edges, x, labels, extra


def evaluate_export(export_dir: str | Path, victim_cfg: gcn.TrainConfig, eval_mode: str = "true-labels") -> dict:
    """Retrain the victim from an exported poisoned graph and score it.

    Reads nothing but the export.  The split is rebuilt from the seed
    recorded in the manifest; isolated injected nodes are filtered before
    training; accuracy is measured over the original test nodes only.
    """
    poisoned, manifest = load_poisoned(export_dir)
    k = int(manifest["num_injected"])
    split_seed = int(manifest["seeds"]["split"])
    clean = clean_subgraph(poisoned, k)
    split = random_split(clean, split_seed)

    n_f, edges, x, labels, extra = _filtered_poisoned_arrays(poisoned, k)
    adj = gcn.normalized_adjacency_from_edges(n_f, edges)
    train_idx = np.concatenate([split.train_array, extra])
    _, probs = gcn.train_core(
        adj, x, labels, poisoned.num_labels, train_idx, split.validation_array, victim_cfg
    )
    pred = np.argmax(probs[: clean.num_nodes], axis=1)

    if eval_mode == "predicted-labels":
        clean_model = gcn.train(clean, split, victim_cfg)
        truth = gcn.predict(clean_model, clean)
    elif eval_mode == "true-labels":
        truth = clean.labels
    else:
        raise ConfigError(f"unknown eval mode {eval_mode!r}")
    acc = gcn.accuracy(pred, truth, split.test_array)
    return {
        "poisoned_accuracy": acc,
        "num_injected": k,
        "num_adv_edges": len(manifest["adv_edges"]),
        "split_seed": split_seed,
    }


def _dispatch_attack(
    method: str,
    g: Graph,
    split,
    cfg: AttackConfig,
    settings: ExperimentSettings,
    seed: int,
) -> tuple[PoisonState, dict | None, list[dict] | None]:
    """Returns (state, episode info, trace)."""
    env_probe = PoisonEnv(g, cfg)
    if env_probe.budget == 0 or env_probe.num_injected == 0:
        return env_probe.reset(derive_seed(seed, "labels", 0)), None, None
    if method == "random":
        return random_attack(g, cfg, seed), None, None
    if method == "preferential":
        return preferential_attack(g, cfg, seed), None, None
    if method == "fga":
        return fga_attack(g, cfg, split, settings.surrogate, seed), None, None
    if method in ("nipa", "nipa-w/o"):
        runner = train_attack if method == "nipa" else nipa_without_labels
        state, result = runner(g, split, cfg, settings.agent, seed, surrogate_cfg=settings.surrogate)
        info = {
            "best_episode": result.best_episode,
            "best_rate": result.best_rate,
            "initial_rate": result.initial_rate,
            "episode_rates": result.episode_rates,
        }
        return state, info, result.trace
    raise ConfigError(f"unknown attack method {method!r}")


def _attack_one_seed(args: tuple) -> dict:
    (g, method, r, deg_inject, seed, settings, out_dir) = args
    split = random_split(g, seed)
    victim_cfg = replace(settings.victim, seed=derive_seed(seed, "victim"))
    surrogate = replace(settings.surrogate, seed=derive_seed(seed, "surrogate"))
    settings = replace(settings, victim=victim_cfg, surrogate=surrogate)

    clean_model = gcn.train(g, split, victim_cfg)
    clean_acc = gcn.accuracy(gcn.predict(clean_model, g), g.labels, split.test_array)

    cfg = AttackConfig(
        r=r,
        deg_inject=deg_inject,
        gamma=settings.gamma,
        surrogate_epochs=settings.surrogate_epochs,
        feature_noise_seed=derive_seed(seed, "features"),
    )
    state, info, trace = _dispatch_attack(method, g, split, cfg, settings, seed)

    export_dir = Path(out_dir) / f"poisoned_seed{seed}"
    env = PoisonEnv(g, cfg, split)
    export_poisoned(
        env,
        state,
        export_dir,
        seeds={"experiment": seed, "split": split.seed, "victim": victim_cfg.seed},
    )
    ev = evaluate_export(export_dir, victim_cfg, settings.eval_mode)
    poisoned, _ = load_poisoned(export_dir)
    stats = graph_statistics(poisoned).to_dict() if poisoned.num_edges else None
    return {
        "seed": seed,
        "clean_accuracy": clean_acc,
        "poisoned_accuracy": ev["poisoned_accuracy"],
        "stats": stats,
        "episode_info": info,
        "trace": trace,
    }


def run_clean(
    g: Graph,
    dataset_id: str,
    seeds: list[int],
    settings: ExperimentSettings | None = None,
    out_dir: str | Path | None = None,
) -> RunReport:
    """Victim accuracy on the clean graph, averaged over seeded splits."""
    settings = settings or ExperimentSettings()
    t0 = time.time()
    accs = []
    for seed in seeds:
        split = random_split(g, seed)
        victim_cfg = replace(settings.victim, seed=derive_seed(seed, "victim"))
        model = gcn.train(g, split, victim_cfg)
        accs.append(gcn.accuracy(gcn.predict(model, g), g.labels, split.test_array))
    report = RunReport(
        dataset=dataset_id,
        method="clean",
        seeds=list(seeds),
        clean_accuracy=accs,
        clean_stats=graph_statistics(g).to_dict() if g.num_edges else None,
        eval_mode=settings.eval_mode,
        config={
            "dataset": dataset_id,
            "method": "clean",
            "seeds": list(seeds),
            **settings.config_dict(),
        },
        wall_clock_sec=time.time() - t0,
    )
    _write_report(report, out_dir)
    return report


def run_attack(
    g: Graph,
    dataset_id: str,
    method: str,
    r: float,
    seeds: list[int],
    out_dir: str | Path,
    deg_inject: float | None = None,
    sparsity: float = 0.0,
    settings: ExperimentSettings | None = None,
) -> RunReport:
    """Full attack pipeline for one method at one operating point.

    Per seed: split, clean victim baseline, attack, poisoned-graph export,
    and a from-scratch victim evaluation read back from the export.
    """
    if method not in METHODS or method == "clean":
        raise ConfigError(f"run_attack method must be an attack, got {method!r}")
    settings = settings or ExperimentSettings()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()

    work = [(g, method, r, deg_inject, seed, settings, out_dir) for seed in seeds]
    if settings.workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=settings.workers) as pool:
            results = list(pool.map(_attack_one_seed, work))
    else:
        results = [_attack_one_seed(w) for w in work]

    report = RunReport(
        dataset=dataset_id,
        method=method,
        seeds=list(seeds),
        r=r,
        deg_inject=deg_inject,
        sparsity=sparsity,
        clean_accuracy=[res["clean_accuracy"] for res in results],
        poisoned_accuracy=[res["poisoned_accuracy"] for res in results],
        clean_stats=graph_statistics(g).to_dict() if g.num_edges else None,
        poisoned_stats=[res["stats"] for res in results],
        episode_info=(
            [res["episode_info"] for res in results]
            if any(res["episode_info"] for res in results)
            else None
        ),
        eval_mode=settings.eval_mode,
        config={
            "dataset": dataset_id,
            "method": method,
            "r": r,
            "deg_inject": deg_inject,
            "sparsity": sparsity,
            "seeds": list(seeds),
            **settings.config_dict(),
        },
        wall_clock_sec=time.time() - t0,
    )
    _write_report(report, out_dir)
    traces = [(res["seed"], res["trace"]) for res in results if res["trace"]]
    if traces and out_dir is not None:
        with open(out_dir / "traces.jsonl", "w") as f:
            for seed, rows in traces:
                for row in rows:
                    f.write(json.dumps({"seed": seed, **row}, sort_keys=True) + "\n")
    return report


def sweep_degree(
    g: Graph,
    dataset_id: str,
    method: str,
    r: float,
    degrees: list[int],
    seeds: list[int],
    out_dir: str | Path,
    settings: ExperimentSettings | None = None,
) -> list[RunReport]:
    """One attack run per injected-node average degree."""
    out_dir = Path(out_dir)
    reports = []
    for deg in degrees:
        reports.append(
            run_attack(
                g, dataset_id, method, r, seeds,
                out_dir / f"deg_{deg}",
                deg_inject=float(deg),
                settings=settings,
            )
        )
    _write_sweep_tsv(out_dir / "degree_sweep.tsv", "deg_inject", [float(d) for d in degrees], reports)
    return reports


def sweep_sparsity(
    g: Graph,
    dataset_id: str,
    method: str,
    r: float,
    fractions: list[float],
    seeds: list[int],
    out_dir: str | Path,
    settings: ExperimentSettings | None = None,
) -> list[RunReport]:
    """Sparsify the clean graph first, then attack, per removal fraction."""
    out_dir = Path(out_dir)
    reports = []
    for frac in fractions:
        g_sparse = sparsify(g, frac, seed=derive_seed(0, "sparsity", int(round(frac * 1000))))
        rep = run_attack(
            g_sparse, dataset_id, method, r, seeds,
            out_dir / f"sparsity_{frac:g}",
            settings=settings,
        )
        rep.sparsity = frac
        _write_report(rep, out_dir / f"sparsity_{frac:g}")
        reports.append(rep)
    _write_sweep_tsv(out_dir / "sparsity_sweep.tsv", "sparsity", fractions, reports)
    return reports


def audit_stats(path: str | Path) -> dict:
    """Graph statistics of an export (clean and poisoned side by side).

    Accepts either a poisoned export directory (with ``injected.json``) or
    a plain dataset directory (clean stats only).
    """
    path = Path(path)
    if (path / "injected.json").is_file():
        poisoned, manifest = load_poisoned(path)
        clean = clean_subgraph(poisoned, int(manifest["num_injected"]))
        return {
            "clean": graph_statistics(clean).to_dict(),
            "poisoned": graph_statistics(poisoned).to_dict(),
        }
    g = load_graph(path)
    return {"clean": graph_statistics(g).to_dict()}


def _write_report(report: RunReport, out_dir: str | Path | None) -> None:
    if out_dir is None:
        return
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "report.json")
    (out / "report.tsv").write_text(report.to_tsv())


def _write_sweep_tsv(path: Path, knob: str, values: list[float], reports: list[RunReport]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{knob}\tclean_mean\tpoisoned_mean\tpoisoned_std"]
    for v, rep in zip(values, reports):
        lines.append(
            f"{v:g}\t{rep.clean_mean!r}\t{rep.poisoned_mean!r}\t{rep.poisoned_std!r}"
        )
    path.write_text("\n".join(lines) + "\n")
