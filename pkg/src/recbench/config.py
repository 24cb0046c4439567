"""Experiment configuration file (JSON)."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .dataio import FORMATS
from .errors import ConfigError
from .hpo import ALGORITHMS
from .models import MODELS
from .searchspace import SearchSpace, default_space

SEED_ENV = "RECBENCH_SEED"

SCHEMA_HELP = """\
experiment config (JSON object):
  dataset    {"path": str, "format": "generic-tsv"|"ml1m", "mode": "implicit"|"explicit",
              "threshold": 4.0, "name": str}            path is relative to the config file
  split      {"method": "random"|"temporal", "test_ratio": 0.2, "valid_ratio": 0.1}
  model      "itemknn"|"puresvd"|"bprmf"|"fm"|"neumf"
  space      optional list of {"name", "kind": "int"|"float"|"categorical",
              "lo", "hi", "scale": "linear"|"log", "choices"}   (overrides the default space)
  optimizer  {"algorithm": "random"|"anneal"|"tpe"|"smac"|"gpbo"|"hyperband"|"bohb",
              "trials": 20, "eta": 3, "b_min": 5, "b_max": 30, "seed": int (optional)}
  rounds 3, cutoffs [5, 10], pool_size 1000, epochs 30, seed 0,
  clock "wall"|"logical", cache true, keep_checkpoints false
environment: RECBENCH_SEED overrides "seed".
"""


@dataclass
class DatasetSpec:
    path: Path
    format: str = "generic-tsv"
    mode: str = "implicit"
    threshold: float = 4.0
    name: str = ""

    def __post_init__(self):
        self.path = Path(self.path)
        if self.format not in FORMATS:
            raise ConfigError(f"dataset.format must be one of {FORMATS}")
        if self.mode not in ("implicit", "explicit"):
            raise ConfigError("dataset.mode must be 'implicit' or 'explicit'")
        if not self.name:
            self.name = self.path.stem


@dataclass
class OptimizerSettings:
    algorithm: str = "random"
    trials: int = 20
    eta: int = 3
    b_min: int = 5
    b_max: int = 30
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"optimizer.algorithm must be one of {sorted(ALGORITHMS)}")
        if self.trials < 1:
            raise ConfigError("optimizer.trials must be >= 1")


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec
    model: str
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    split_method: str = "random"
    test_ratio: float = 0.2
    valid_ratio: float = 0.1
    space: SearchSpace | None = None
    rounds: int = 3
    cutoffs: tuple[int, ...] = (5, 10)
    pool_size: int = 1000
    epochs: int = 30
    seed: int = 0
    clock: str = "wall"
    cache: bool = True
    keep_checkpoints: bool = False

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.clock not in ("wall", "logical"):
            raise ConfigError("clock must be 'wall' or 'logical'")
        if self.epochs < 1 or self.pool_size < 1:
            raise ConfigError("epochs and pool_size must be >= 1")
        if not self.cutoffs or any(int(n) < 1 for n in self.cutoffs):
            raise ConfigError("cutoffs must be positive integers")
        self.cutoffs = tuple(int(n) for n in self.cutoffs)
        if self.space is None:
            self.space = default_space(self.model)

    @property
    def search_space(self) -> SearchSpace:
        return self.space

    @classmethod
    def from_json(cls, obj: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        if not isinstance(obj, dict):
            raise ConfigError("experiment config must be a JSON object")
        try:
            ds = dict(obj["dataset"])
            model = obj["model"]
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"missing required key {exc}") from None
        path = Path(ds.pop("path", ""))
        if not str(path):
            raise ConfigError("dataset.path is required")
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        opt = dict(obj.get("optimizer", {}))
        known = {"algorithm", "trials", "eta", "b_min", "b_max", "seed"}
        settings = OptimizerSettings(**{k: v for k, v in opt.items() if k in known},
                                     extra={k: v for k, v in opt.items() if k not in known})
        split = obj.get("split", {})
        space = obj.get("space")
        try:
            return cls(
                dataset=DatasetSpec(path, **ds),
                model=model,
                optimizer=settings,
                split_method=split.get("method", "random"),
                test_ratio=float(split.get("test_ratio", 0.2)),
                valid_ratio=float(split.get("valid_ratio", 0.1)),
                space=SearchSpace.from_json(space) if space is not None else None,
                rounds=int(obj.get("rounds", 3)),
                cutoffs=tuple(obj.get("cutoffs", (5, 10))),
                pool_size=int(obj.get("pool_size", 1000)),
                epochs=int(obj.get("epochs", 30)),
                seed=int(obj.get("seed", 0)),
                clock=obj.get("clock", "wall"),
                cache=bool(obj.get("cache", True)),
                keep_checkpoints=bool(obj.get("keep_checkpoints", False)),
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path, env: dict[str, str] | None = None) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            obj = json.loads(path.read_text())
        except ValueError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        cfg = cls.from_json(obj, base_dir=path.parent)
        env = os.environ if env is None else env
        if env.get(SEED_ENV):
            try:
                cfg.seed = int(env[SEED_ENV])
            except ValueError:
                raise ConfigError(f"{SEED_ENV} must be an integer") from None
        return cfg

    def to_json(self) -> dict[str, Any]:
        opt = {"algorithm": self.optimizer.algorithm, "trials": self.optimizer.trials,
               "eta": self.optimizer.eta, "b_min": self.optimizer.b_min,
               "b_max": self.optimizer.b_max, **self.optimizer.extra}
        if self.optimizer.seed is not None:
            opt["seed"] = self.optimizer.seed
        return {
            "dataset": {"path": str(self.dataset.path), "format": self.dataset.format,
                        "mode": self.dataset.mode, "threshold": self.dataset.threshold,
                        "name": self.dataset.name},
            "split": {"method": self.split_method, "test_ratio": self.test_ratio,
                      "valid_ratio": self.valid_ratio},
            "model": self.model,
            "space": self.space.to_json(),
            "optimizer": opt,
            "rounds": self.rounds, "cutoffs": list(self.cutoffs), "pool_size": self.pool_size,
            "epochs": self.epochs, "seed": self.seed, "clock": self.clock,
            "cache": self.cache, "keep_checkpoints": self.keep_checkpoints,
        }
