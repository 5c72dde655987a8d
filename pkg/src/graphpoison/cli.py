"""Command-line front end.

Subcommands: ``clean``, ``attack``, ``sweep-degree``, ``sweep-sparsity``,
``stats``, ``export``.  A JSON config file can preset any option group;
command-line flags override it.  All paths are resolved relative to
``--workdir``; the default output directory comes from the
``GRAPHPOISON_OUT`` environment variable.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 runtime
divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .agent import AgentConfig
from .errors import (
    ConfigError,
    GraphParseError,
    GraphValidationError,
    NonFiniteError,
    SamplingStuckError,
)
from .experiment import (
    ExperimentSettings,
    audit_stats,
    run_attack,
    run_clean,
    sweep_degree,
    sweep_sparsity,
)
from .gcn import TrainConfig
from .graph import load_graph, save_graph, sbm_generate, sparsify
from .rng import derive_seed
from .report import METHODS

__all__ = ["main"]

_DEFAULT_DEGREES = list(range(3, 11))
_DEFAULT_FRACTIONS = [round(0.1 * i, 1) for i in range(10)]


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # noqa: D102 - argparse hook
        raise ConfigError(message)


def _add_common(parser: argparse.ArgumentParser, suppress: bool) -> None:
    def dflt(v):
        return argparse.SUPPRESS if suppress else v

    parser.add_argument("--workdir", default=dflt("."), help="base for relative paths")
    parser.add_argument("--config", default=dflt(None), help="JSON config file")
    parser.add_argument(
        "--out", default=dflt(None),
        help="output directory (default $GRAPHPOISON_OUT or <workdir>/runs)",
    )
    parser.add_argument("--seeds", type=int, default=dflt(None), help="number of seeds (0..N-1)")
    parser.add_argument("--workers", type=int, default=dflt(None), help="parallel seed workers")


def _build_parser() -> _Parser:
    p = _Parser(prog="graphpoison", description=__doc__)
    _add_common(p, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _add_common(common, suppress=True)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_dataset(sp):
        sp.add_argument("--dataset", required=True, help="graph directory")

    sp = sub.add_parser("clean", parents=[common], help="victim accuracy on the clean graph")
    add_dataset(sp)

    sp = sub.add_parser("attack", parents=[common], help="poison the graph with one method")
    add_dataset(sp)
    sp.add_argument("--method", required=True, choices=[m for m in METHODS if m != "clean"])
    sp.add_argument("--r", type=float, default=0.01, help="injected-node ratio")
    sp.add_argument("--deg", type=float, default=None, help="average injected degree override")
    sp.add_argument("--sparsity", type=float, default=0.0,
                    help="remove this edge fraction from the clean graph first")

    sp = sub.add_parser("sweep-degree", parents=[common], help="attack across injected degrees")
    add_dataset(sp)
    sp.add_argument("--method", default="nipa", choices=[m for m in METHODS if m != "clean"])
    sp.add_argument("--r", type=float, default=0.01)
    sp.add_argument("--degrees", type=int, nargs="*", default=_DEFAULT_DEGREES)

    sp = sub.add_parser("sweep-sparsity", parents=[common], help="attack across graph sparsity levels")
    add_dataset(sp)
    sp.add_argument("--method", default="nipa", choices=[m for m in METHODS if m != "clean"])
    sp.add_argument("--r", type=float, default=0.01)
    sp.add_argument("--fractions", type=float, nargs="*", default=_DEFAULT_FRACTIONS)

    sp = sub.add_parser("stats", parents=[common], help="graph statistics of a dataset or export")
    sp.add_argument("--dataset", required=True, help="dataset or poisoned-export directory")

    sp = sub.add_parser("export", parents=[common], help="generate a synthetic block-model dataset")
    sp.add_argument("--dataset", required=True, help="output graph directory")
    sp.add_argument("--blocks", type=int, default=2)
    sp.add_argument("--nodes-per-block", type=int, default=100)
    sp.add_argument("--p-in", type=float, default=0.1)
    sp.add_argument("--p-out", type=float, default=0.01)
    sp.add_argument("--feat-dim", type=int, default=8)
    sp.add_argument("--feat-signal", type=float, default=1.0)
    sp.add_argument("--seed", type=int, default=0)
    return p


def _load_config_file(path: Path) -> dict:
    try:
        payload = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path}:{e.lineno}: {e.msg}") from None
    if not isinstance(payload, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return payload


def _dataclass_from(cls, payload: dict, where: str):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - fields
    if unknown:
        raise ConfigError(f"unknown {where} config keys: {sorted(unknown)}")
    try:
        return cls(**payload)
    except TypeError as e:
        raise ConfigError(f"bad {where} config: {e}") from None


def _settings_from_config(cfg: dict, workers: int) -> tuple[ExperimentSettings, dict]:
    settings = ExperimentSettings(
        victim=_dataclass_from(TrainConfig, cfg.get("victim", {}), "victim"),
        surrogate=_dataclass_from(
            TrainConfig,
            {"hidden_dim": 8, "lr": 0.02, "patience": 10, **cfg.get("surrogate", {})},
            "surrogate",
        ),
        agent=_dataclass_from(AgentConfig, cfg.get("agent", {}), "agent"),
        gamma=float(cfg.get("gamma", 0.9)),
        surrogate_epochs=int(cfg.get("surrogate_epochs", 50)),
        eval_mode=str(cfg.get("eval_mode", "true-labels")),
        workers=workers,
    )
    return settings, cfg


def _resolve(args: argparse.Namespace) -> tuple[dict, ExperimentSettings, Path, list[int]]:
    workdir = Path(args.workdir)
    cfg = _load_config_file(workdir / args.config) if args.config else {}
    n_seeds = args.seeds if args.seeds is not None else int(cfg.get("seeds", 5))
    if n_seeds < 1:
        raise ConfigError("--seeds must be >= 1")
    seeds = list(range(n_seeds))
    workers = args.workers if args.workers is not None else int(cfg.get("workers", 1))
    settings, cfg = _settings_from_config(cfg, max(1, workers))
    out = args.out or os.environ.get("GRAPHPOISON_OUT") or "runs"
    out_dir = workdir / out
    return cfg, settings, out_dir, seeds


def _dataset_path(args: argparse.Namespace) -> Path:
    return Path(args.workdir) / args.dataset


def _run(args: argparse.Namespace) -> int:
    if args.command == "export":
        g = sbm_generate(
            blocks=args.blocks,
            nodes_per_block=args.nodes_per_block,
            p_in=args.p_in,
            p_out=args.p_out,
            feat_dim=args.feat_dim,
            feat_signal=args.feat_signal,
            seed=args.seed,
        )
        save_graph(g, _dataset_path(args))
        print(f"wrote {g.num_nodes}-node graph ({g.num_edges} edges) to {_dataset_path(args)}")
        return 0

    if args.command == "stats":
        table = audit_stats(_dataset_path(args))
        for which, stats in table.items():
            print(f"[{which}]")
            for key, value in stats.items():
                print(f"  {key:18s} {value}")
        return 0

    cfg, settings, out_dir, seeds = _resolve(args)
    dataset_dir = _dataset_path(args)
    g = load_graph(dataset_dir)
    dataset_id = dataset_dir.name

    if args.command == "clean":
        report = run_clean(g, dataset_id, seeds, settings, out_dir / f"{dataset_id}_clean")
        print(f"clean accuracy: {report.clean_mean:.4f} +- {report.clean_std:.4f}")
        return 0

    if args.command == "attack":
        name = args.method.replace("/", "-")
        if args.sparsity:
            g = sparsify(g, args.sparsity, derive_seed(0, "sparsity", int(round(args.sparsity * 1000))))
        report = run_attack(
            g, dataset_id, args.method, args.r, seeds,
            out_dir / f"{dataset_id}_{name}_r{args.r:g}",
            deg_inject=args.deg,
            sparsity=args.sparsity,
            settings=settings,
        )
        print(
            f"{args.method} @ r={args.r:g}: clean {report.clean_mean:.4f} -> "
            f"poisoned {report.poisoned_mean:.4f} +- {report.poisoned_std:.4f}"
        )
        return 0

    if args.command == "sweep-degree":
        reports = sweep_degree(
            g, dataset_id, args.method, args.r, args.degrees, seeds,
            out_dir / f"{dataset_id}_degsweep", settings=settings,
        )
        for deg, rep in zip(args.degrees, reports):
            print(f"deg={deg}: poisoned {rep.poisoned_mean:.4f}")
        return 0

    if args.command == "sweep-sparsity":
        reports = sweep_sparsity(
            g, dataset_id, args.method, args.r, args.fractions, seeds,
            out_dir / f"{dataset_id}_sparsitysweep", settings=settings,
        )
        for frac, rep in zip(args.fractions, reports):
            print(f"sparsity={frac:g}: poisoned {rep.poisoned_mean:.4f}")
        return 0

    raise ConfigError(f"unhandled command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _run(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except (GraphParseError, GraphValidationError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except (NonFiniteError, SamplingStuckError) as e:
        print(f"runtime divergence: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
