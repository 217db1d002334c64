"""Experiment specification read from JSON."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from ..synth import SceneConfig
from ..train import TrainConfig

KINDS = ("classification", "transfer", "matching", "proposals", "detector", "tracker")

# grids each pipeline needs (empty lists are rejected)
REQUIRED_SWEEPS = {
    "proposals": ("t_o", "k", "s_t"),
    "detector": ("t_o", "gamma"),
    "tracker": ("o_t",),
}

DEFAULT_SWEEPS = {
    "t_o": [round(0.05 * i, 2) for i in range(1, 21)],
    "k": list(range(1, 11)) + list(range(20, 101, 10)),
    "s_t": [0.5, 0.6, 0.7, 0.8, 0.9],
    "gamma": [0.5, 1, 2, 3, 4],
    "o_t": [round(0.1 * i, 1) for i in range(1, 10)],
}


@dataclass
class ExperimentSpec:
    kind: str
    seed: int = 0
    out: str = "runs"
    data: dict | str = field(default_factory=dict)
    network: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    sweeps: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown pipeline kind {self.kind!r} (choose from {', '.join(KINDS)})")
        for axis in REQUIRED_SWEEPS.get(self.kind, ()):
            grid = self.sweeps.get(axis, DEFAULT_SWEEPS[axis])
            if not grid:
                raise ValueError(f"sweep axis {axis!r} must not be empty for {self.kind}")

    def grid(self, axis: str) -> list:
        return list(self.sweeps.get(axis, DEFAULT_SWEEPS.get(axis, [])))

    def scene_config(self) -> SceneConfig:
        if isinstance(self.data, str):
            raise ValueError("data points to a dataset directory, not a scene config")
        d = {k: v for k, v in self.data.items() if k in {f.name for f in fields(SceneConfig)}}
        return SceneConfig.from_dict(d)

    def data_option(self, key, default):
        return self.data.get(key, default) if isinstance(self.data, dict) else default

    def train_config(self, **defaults) -> TrainConfig:
        merged = {**defaults, **self.train}
        merged.setdefault("seed", self.seed)
        return TrainConfig(**merged)

    def opt(self, key, default=None):
        return self.options.get(key, default)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))
