"""Run records: schema, canonical serialization, config hashing.

A RunReport captures one experiment (one method at one operating point,
several seeds).  Serialization is canonical (sorted keys, stable float
repr), so identical configurations reproduce byte-identical files except
for the wall-clock field; the config hash covers every result-determining
field and nothing else.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import GraphValidationError

__all__ = ["RunReport", "canonical_json", "config_hash", "METHODS"]

METHODS = ("clean", "random", "preferential", "fga", "nipa-w/o", "nipa")


def canonical_json(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def config_hash(config: dict) -> str:
    """sha256 over the canonical form of the resolved configuration."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _mean(xs: list[float]) -> float:
    return sum(xs) / len(xs)


def _std(xs: list[float]) -> float:
    if len(xs) < 2:
        return 0.0
    m = _mean(xs)
    return (sum((x - m) ** 2 for x in xs) / (len(xs) - 1)) ** 0.5


@dataclass
class RunReport:
    """Aggregated record of one experiment across seeds."""

    dataset: str
    method: str
    seeds: list[int]
    r: float | None = None
    deg_inject: float | None = None
    sparsity: float = 0.0
    clean_accuracy: list[float] = field(default_factory=list)
    poisoned_accuracy: list[float] | None = None
    clean_stats: dict | None = None
    poisoned_stats: list[dict] | None = None
    episode_info: list[dict] | None = None
    eval_mode: str = "true-labels"
    config: dict = field(default_factory=dict)
    wall_clock_sec: float = 0.0

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise GraphValidationError(
                f"unknown method {self.method!r}; expected one of {METHODS}"
            )

    @property
    def clean_mean(self) -> float:
        return _mean(self.clean_accuracy)

    @property
    def clean_std(self) -> float:
        return _std(self.clean_accuracy)

    @property
    def poisoned_mean(self) -> float | None:
        return _mean(self.poisoned_accuracy) if self.poisoned_accuracy else None

    @property
    def poisoned_std(self) -> float | None:
        return _std(self.poisoned_accuracy) if self.poisoned_accuracy else None

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    def to_dict(self) -> dict[str, Any]:
        return {
            "dataset": self.dataset,
            "method": self.method,
            "seeds": self.seeds,
            "r": self.r,
            "deg_inject": self.deg_inject,
            "sparsity": self.sparsity,
            "clean_accuracy": self.clean_accuracy,
            "clean_mean": self.clean_mean,
            "clean_std": self.clean_std,
            "poisoned_accuracy": self.poisoned_accuracy,
            "poisoned_mean": self.poisoned_mean,
            "poisoned_std": self.poisoned_std,
            "clean_stats": self.clean_stats,
            "poisoned_stats": self.poisoned_stats,
            "episode_info": self.episode_info,
            "eval_mode": self.eval_mode,
            "config": self.config,
            "config_hash": self.config_hash,
            "wall_clock_sec": self.wall_clock_sec,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(
            dataset=d["dataset"],
            method=d["method"],
            seeds=list(d["seeds"]),
            r=d.get("r"),
            deg_inject=d.get("deg_inject"),
            sparsity=d.get("sparsity", 0.0),
            clean_accuracy=list(d.get("clean_accuracy", [])),
            poisoned_accuracy=(
                list(d["poisoned_accuracy"]) if d.get("poisoned_accuracy") else None
            ),
            clean_stats=d.get("clean_stats"),
            poisoned_stats=d.get("poisoned_stats"),
            episode_info=d.get("episode_info"),
            eval_mode=d.get("eval_mode", "true-labels"),
            config=d.get("config", {}),
            wall_clock_sec=d.get("wall_clock_sec", 0.0),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(canonical_json(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "RunReport":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_tsv(self) -> str:
        """Flat per-seed rows plus a summary row; excludes wall clock."""
        header = [
            "dataset", "method", "r", "deg_inject", "sparsity",
            "seed", "clean_accuracy", "poisoned_accuracy",
        ]
        lines = ["\t".join(header)]
        for i, seed in enumerate(self.seeds):
            pa = self.poisoned_accuracy[i] if self.poisoned_accuracy else ""
            lines.append(
                "\t".join(
                    str(x)
                    for x in [
                        self.dataset, self.method,
                        "" if self.r is None else self.r,
                        "" if self.deg_inject is None else self.deg_inject,
                        self.sparsity, seed,
                        repr(self.clean_accuracy[i]),
                        repr(pa) if pa != "" else "",
                    ]
                )
            )
        pm = self.poisoned_mean
        lines.append(
            "\t".join(
                str(x)
                for x in [
                    self.dataset, self.method,
                    "" if self.r is None else self.r,
                    "" if self.deg_inject is None else self.deg_inject,
                    self.sparsity, "mean",
                    repr(self.clean_mean),
                    repr(pm) if pm is not None else "",
                ]
            )
        )
        return "\n".join(lines) + "\n"
