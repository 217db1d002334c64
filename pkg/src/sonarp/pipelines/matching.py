"""Patch matching: train a two-channel or siamese matcher on synthetic pairs,
report ROC/AUC and per-pair-type accuracy next to a CC baseline."""

from __future__ import annotations

import numpy as np

from ..metrics import RocCurve, roc_auc
from ..netzoo import Network
from ..synth import PAIR_KINDS, PairSet, make_matching_set
from ..tmatch import similarity_matrix, TemplateSet
from ..train import train
from .common import Outputs, build_network, log
from .spec import ExperimentSpec

DEFAULT_NET = {"builder": "matcher", "kind": "two_channel", "head": "class2_softmax"}


def match_scores(net: Network, x: np.ndarray) -> np.ndarray:
    """Probability that each pair matches."""
    p = net.predict(x)
    return p[:, 1] if p.ndim == 2 and p.shape[1] == 2 else p.reshape(-1)


def decide(p) -> np.ndarray:
    """``argmax{1 - p, p}``; an exact 0.5 resolves to no-match."""
    return (np.asarray(p) > 0.5).astype(int)


def cc_pair_scores(x: np.ndarray) -> np.ndarray:
    """CC of the two channels of each pair mapped to [0, 1]."""
    out = np.empty(len(x))
    for i, pair in enumerate(x):
        s = similarity_matrix(pair[0:1], TemplateSet(pair[1:2], [0]), "cc")[0, 0]
        out[i] = 0.5 if np.isnan(s) else (s + 1) / 2
    return out


def _row(name, scores, ps: PairSet):
    roc = roc_auc(scores, ps.y)
    pred = decide(scores)
    row = {"model": name, "auc": roc.auc, "accuracy": float(np.mean(pred == ps.y))}
    for k, kname in enumerate(PAIR_KINDS):
        sel = ps.kind == k
        row[f"acc_{kname}"] = float(np.mean(pred[sel] == ps.y[sel])) if sel.any() else float("nan")
    return row, roc


def _roc_rows(roc: RocCurve):
    return [[f, t, "inf" if np.isinf(h) else float(h)] for f, t, h in zip(roc.fpr, roc.tpr, roc.thresholds)]


def train_matcher(spec: ExperimentSpec, sets: dict | None = None, out: Outputs | None = None) -> Network:
    """Matcher trained with the recipe for its kind on ``sets["train"]``."""
    if sets is None:
        sets = make_matching_set(spec.scene_config(), int(spec.data_option("objects_per_class", 15)),
                                 seed=spec.seed, mode=spec.opt("mode", "shared"))
    tr = sets["train"]
    y_train = tr.y
    if spec.opt("shuffle_labels", False):
        y_train = np.random.default_rng([spec.seed, 9]).permutation(y_train)
    net_cfg = {**DEFAULT_NET, **spec.network}
    net = build_network(net_cfg, spec.seed)
    epochs = 5 if net_cfg["kind"] == "two_channel" else 15
    loss = "categorical_ce" if net_cfg["head"] == "class2_softmax" else "binary_ce"
    cfg = spec.train_config(epochs=epochs, lr=0.01, batch_size=128, loss=loss)
    val = (sets["val"].x, sets["val"].y) if "val" in sets else None
    hist = train(net, tr.x, y_train, cfg, val=val)
    if out is not None:
        out.train_log("train_log_matcher", hist)
        out.model("matcher", net)
    return net


def run_matching(spec: ExperimentSpec) -> list[dict]:
    out = Outputs(spec.out_dir)
    mode = spec.opt("mode", "shared")
    sets = make_matching_set(spec.scene_config(), int(spec.data_option("objects_per_class", 15)),
                             seed=spec.seed, mode=mode)
    te = sets["test"]
    if len(np.unique(te.y)) < 2:
        raise ValueError("evaluation pairs contain a single class")
    net = train_matcher(spec, sets, out)
    rows = []
    row, roc = _row(net.name, match_scores(net, te.x), te)
    rows.append(row)
    out.curve("roc", ["fpr", "tpr", "threshold"], _roc_rows(roc))
    if spec.opt("cc_baseline", True):
        row_cc, roc_cc = _row("CC", cc_pair_scores(te.x), te)
        rows.append(row_cc)
        out.curve("roc_cc", ["fpr", "tpr", "threshold"], _roc_rows(roc_cc))
    log.info("matching (%s): AUC %.4f", mode, row["auc"])
    header = ["model", "auc", "accuracy"] + [f"acc_{k}" for k in PAIR_KINDS]
    out.report(header, [[r[h] for h in header] for r in rows])
    return rows
