"""Shared helpers for the experiment drivers."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from ..metrics import write_rows
from ..netzoo import (Network, build_classic_net, build_detector, build_fire_net, build_matcher,
                      build_objectness_net, build_tiny_net)
from ..serialize import save_model
from ..synth import SonarFrame, generate_frames, load_dataset
from ..train import EpochLog, write_log
from .spec import ExperimentSpec

log = logging.getLogger("sonarp")

NETWORKS = {
    "classic": build_classic_net,
    "tiny": build_tiny_net,
    "fire": build_fire_net,
    "matcher": build_matcher,
    "objectness": build_objectness_net,
    "detector": build_detector,
}


def build_network(cfg: dict, seed: int, **defaults) -> Network:
    cfg = {**defaults, **cfg}
    builder = cfg.pop("builder")
    if builder not in NETWORKS:
        raise ValueError(f"unknown network builder {builder!r}")
    return NETWORKS[builder](seed=seed, **cfg)


class Outputs:
    """``report.csv``, ``curves/*.csv`` and ``models/*.flsn`` under one root."""

    def __init__(self, root):
        self.root = Path(root)
        (self.root / "curves").mkdir(parents=True, exist_ok=True)
        (self.root / "models").mkdir(parents=True, exist_ok=True)

    def report(self, header, rows):
        write_rows(self.root / "report.csv", header, rows)
        return self.root / "report.csv"

    def curve(self, name, header, rows):
        path = self.root / "curves" / f"{name}.csv"
        write_rows(path, header, rows)
        return path

    def train_log(self, name, history: list[EpochLog]):
        path = self.root / "curves" / f"{name}.csv"
        write_log(history, path)
        return path

    def model(self, name, net: Network):
        path = self.root / "models" / f"{name}.flsn"
        save_model(net, path)
        return path


def frames_for(spec: ExperimentSpec, split: str, default_count: int) -> list[SonarFrame]:
    """Frames from a dataset directory (all of them) or freshly generated for
    ``split``; each split draws from its own seed stream."""
    if isinstance(spec.data, str):
        frames, _ = load_dataset(spec.data)
        return frames
    offsets = {"train": 0, "val": 1, "test": 2, "templates": 3}
    n = int(spec.data_option(f"{split}_frames", default_count))
    return generate_frames(spec.scene_config(), n, seed=spec.seed * 10 + offsets[split], prefix=split)


def mean_std(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std())
