"""Run configuration: one JSON document covering every stage of the pipeline.

Sections mirror the modules (``render``, ``corpus``, ``model``, ``train``,
``eval``); ``seed`` and ``folds`` sit at the top level. Unknown keys are
rejected at every level. Every command writes the resolved configuration
next to its outputs, and loading that snapshot reproduces the run.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .model import VitConfig
from .render import RenderConfig
from .training import TrainConfig


@dataclass(frozen=True)
class CorpusConfig:
    """Synthetic source heads and mesh-to-point-cloud sampling."""
    n_lat: int = 32
    n_lon: int = 64
    texture_size: int = 256
    skin_detail: float = 9.0
    point_samples: int = 200_000


@dataclass(frozen=True)
class EvalConfig:
    logistic: bool = False


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    folds: int = 5
    render: RenderConfig = field(default_factory=RenderConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    model: VitConfig = field(default_factory=VitConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError(f"folds must be >= 2, got {self.folds}")

    # the training loop takes its seed from the run seed
    def train_config(self) -> TrainConfig:
        return replace(self.train, seed=self.seed)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["train"].pop("seed")
        return d

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        return _build(cls, data, "")

    def with_overrides(self, overrides: dict) -> RunConfig:
        """Apply dotted-key overrides such as ``{"train.epochs": 3}``."""
        merged = self.to_dict()
        for key, value in overrides.items():
            node = merged
            parts = key.split(".")
            for p in parts[:-1]:
                if not isinstance(node.get(p), dict):
                    raise ValueError(f"unknown config key {key!r}")
                node = node[p]
            if parts[-1] not in node:
                raise ValueError(f"unknown config key {key!r}")
            node[parts[-1]] = value
        return RunConfig.from_dict(merged)


_NESTED = {"render": RenderConfig, "corpus": CorpusConfig, "model": VitConfig,
           "train": TrainConfig, "eval": EvalConfig}


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ValueError(f"config section {where or '<root>'} must be an object")
    allowed = {f.name for f in fields(cls)}
    if cls is TrainConfig:
        allowed.discard("seed")
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ValueError(f"unknown config key(s) {', '.join(where + k for k in unknown)}")
    kwargs = {}
    for k, v in data.items():
        if cls is RunConfig and k in _NESTED:
            kwargs[k] = _build(_NESTED[k], v, f"{k}.")
        elif isinstance(v, list):
            kwargs[k] = tuple(v)
        else:
            kwargs[k] = v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ValueError(f"bad config section {where or '<root>'}: {exc}") from None


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        cfg = RunConfig.from_dict(json.loads(Path(path).read_text()))
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg


def dump_json(obj, path) -> Path:
    """Deterministic JSON (sorted keys, trailing newline)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def save_snapshot(cfg: RunConfig, out_dir, name: str = "resolved_config.json") -> Path:
    return dump_json(cfg.to_dict(), Path(out_dir) / name)
