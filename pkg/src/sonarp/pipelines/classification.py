"""Patch classification: train a classifier net and report test accuracy,
optionally across samples-per-class and image-size sweeps and repeats."""

from __future__ import annotations

import numpy as np

from ..metrics import accuracy
from ..synth import PatchSet, make_classification_set, resize_patches
from ..train import train
from .common import Outputs, build_network, log, mean_std
from .spec import ExperimentSpec

DEFAULT_NET = {"builder": "classic", "n_modules": 2, "filters": 16}


def subsample(ps: PatchSet, spc: int, rng: np.random.Generator) -> PatchSet:
    """``spc`` random samples of every class (all of them if fewer)."""
    idx = []
    for c in np.unique(ps.y):
        pool = np.flatnonzero(ps.y == c)
        idx.extend(np.sort(rng.choice(pool, min(spc, len(pool)), replace=False)))
    idx = np.array(idx, dtype=int)
    return PatchSet(ps.x[idx], ps.y[idx])


def classification_sets(spec: ExperimentSpec, max_spc: int) -> dict[str, PatchSet]:
    return make_classification_set(
        spec.scene_config(), max_spc, seed=spec.seed,
        val_per_class=int(spec.data_option("val_per_class", 20)),
        test_per_class=int(spec.data_option("test_per_class", 50)))


def run_classification(spec: ExperimentSpec) -> list[dict]:
    out = Outputs(spec.out_dir)
    net_cfg = {**DEFAULT_NET, **spec.network}
    epochs = 20 if net_cfg["builder"] == "classic" else 30
    spc_grid = [int(v) for v in spec.grid("spc")] or [int(spec.data_option("spc", 60))]
    sizes = [int(v) for v in spec.grid("size")] or [96]
    repeats = int(spec.opt("repeats", 3))
    sets = classification_sets(spec, max(spc_grid))
    rows = []
    for size in sizes:
        tr_all = PatchSet(resize_patches(sets["train"].x, size), sets["train"].y)
        va = PatchSet(resize_patches(sets["val"].x, size), sets["val"].y)
        te = PatchSet(resize_patches(sets["test"].x, size), sets["test"].y)
        for spc in spc_grid:
            accs = []
            for r in range(repeats):
                seed = spec.seed + r
                tr = subsample(tr_all, spc, np.random.default_rng([seed, spc]))
                net = build_network(net_cfg, seed, input_size=size)
                cfg = spec.train_config(epochs=epochs, lr=0.01, batch_size=64, loss="categorical_ce")
                cfg.seed = seed
                hist = train(net, tr.x, tr.y, cfg, val=(va.x, va.y))
                acc = accuracy(net.predict(te.x).argmax(axis=1), te.y)
                log.info("%s spc=%d size=%d seed=%d: test accuracy %.4f", net.name, spc, size, seed, acc)
                tag = f"spc{spc}_s{size}_r{r}"
                out.train_log(f"train_log_{tag}", hist)
                out.model(f"classifier_{tag}", net)
                accs.append(acc)
            m, s = mean_std(accs)
            rows.append({"network": net.name, "spc": spc, "size": size, "repeats": repeats,
                         "acc_mean": m, "acc_std": s})
    header = ["network", "spc", "size", "repeats", "acc_mean", "acc_std"]
    out.report(header, [[r[h] for h in header] for r in rows])
    return rows
