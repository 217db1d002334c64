"""Detection proposals: score every window of the test frames once, then
sweep the threshold, top-k and NMS settings and report recall, proposal
count and ABO."""

from __future__ import annotations

import time

import numpy as np

from ..geometry import nms, select_by_threshold, select_top_k, sliding_windows, write_proposals
from ..metrics import proposal_stats
from ..netzoo import ConfigurationError, Network, to_fcn
from ..proposals import FcnScorer, PatchScorer, TemplateScorer, score_windows
from ..serialize import load_model
from ..synth import SceneConfig, load_dataset, make_objectness_set, object_templates
from ..tmatch import TemplateSet
from ..train import train
from .common import Outputs, build_network, frames_for, log
from .spec import ExperimentSpec

DEFAULT_NET = {"builder": "objectness", "kind": "tiny"}
STATS = ["recall", "n_mean", "n_std", "abo"]


def scorer_for(net: Network, fcn: bool = True):
    """Dense FCN scorer when the network allows it, per-window otherwise."""
    if net.output == "objectness_map":
        return FcnScorer(net)
    if fcn and net.output == "objectness":
        try:
            return FcnScorer(to_fcn(net))
        except ConfigurationError:
            pass
    return PatchScorer(net)


def train_objectness(spec: ExperimentSpec, out: Outputs | None = None) -> Network:
    frames = frames_for(spec, "train", 30)
    ds = make_objectness_set(frames, seed=spec.seed, eps=float(spec.opt("eps", 0.2)))
    net = build_network({**DEFAULT_NET, **spec.network}, spec.seed)
    cfg = spec.train_config(epochs=3, lr=0.001, batch_size=64, loss="mse")
    hist = train(net, ds.x, ds.y, cfg, metric=None)
    if out is not None:
        out.train_log("train_log_objectness", hist)
        out.model("objectness", net)
    return net


def objectness_scorer(spec: ExperimentSpec, out: Outputs | None = None, key: str = "model"):
    """Scorer from ``options[key]`` (a model file) or trained on the spot."""
    path = spec.opt(key)
    net = load_model(path) if path else train_objectness(spec, out)
    return scorer_for(net, bool(spec.opt("fcn", True)))


def template_scorer(spec: ExperimentSpec) -> TemplateScorer:
    per_class = int(spec.opt("templates_per_class", 10))
    if isinstance(spec.data, str):
        cfg = load_dataset(spec.data)[1] or SceneConfig()
    else:
        cfg = spec.scene_config()
    patches, labels = object_templates(cfg, per_class, seed=spec.seed * 10 + 3)
    return TemplateScorer(TemplateSet(patches, labels), n=len(patches))


def score_frames(frames, scorer, window: int = 96, stride: int = 8):
    """Scored window list per frame, plus mean milliseconds per frame."""
    t0 = time.perf_counter()
    scored = [score_windows(f.image, sliding_windows(f.image.shape, f.mask, window, stride), scorer)
              for f in frames]
    return scored, (time.perf_counter() - t0) * 1e3 / max(len(frames), 1)


def _nms(boxes, s_t):
    return boxes if s_t is None else nms(boxes, s_t)


def _stats(selected, frames, o_t):
    st = proposal_stats([(p, f.boxes) for p, f in zip(selected, frames)], o_t)
    return [st.recall, st.n_mean, st.n_std, st.abo]


def _fmt(v):
    return "none" if v is None else v


def threshold_rows(name, scored, frames, t_grid, s_grid, o_t=0.5):
    rows = []
    for s_t in s_grid:
        for t_o in t_grid:
            sel = [_nms(select_by_threshold(s, t_o), s_t) for s in scored]
            rows.append([name, t_o, _fmt(s_t)] + _stats(sel, frames, o_t))
    return rows


def topk_rows(name, scored, frames, k_grid, s_grid, o_t=0.5):
    rows = []
    for s_t in s_grid:
        for k in k_grid:
            sel = [select_top_k(_nms(s, s_t), k) for s in scored]
            rows.append([name, k, _fmt(s_t)] + _stats(sel, frames, o_t))
    return rows


def run_proposals(spec: ExperimentSpec, scorer=None) -> list[dict]:
    out = Outputs(spec.out_dir)
    o_t = float(spec.opt("o_t", 0.5))
    t_op, s_op, k_op = spec.opt("t_o", 0.5), spec.opt("s_t", 0.7), spec.opt("k")
    scorers = {"cnn": scorer if scorer is not None else objectness_scorer(spec, out)}
    if spec.opt("tm_baseline", False):
        scorers["tm"] = template_scorer(spec)
    frames = frames_for(spec, "test", 20)
    t_grid, k_grid, s_grid = spec.grid("t_o"), spec.grid("k"), spec.grid("s_t")
    th_rows, k_rows, report = [], [], []
    for name, sc in scorers.items():
        scored, ms = score_frames(frames, sc)
        log.info("%s scorer: %.1f ms per frame", name, ms)
        th_rows += threshold_rows(name, scored, frames, t_grid, s_grid, o_t)
        k_curve = topk_rows(name, scored, frames, k_grid, s_grid, o_t)
        k_rows += k_curve
        sel = []
        for s in scored:
            p = select_by_threshold(s, t_op) if t_op is not None else s
            p = _nms(p, s_op)
            sel.append(select_top_k(p, int(k_op)) if k_op is not None else p)
        if name == "cnn":
            write_proposals(out.root / "proposals.csv",
                            [(f.id, b) for f, props in zip(frames, sel) for b in props])
        rec, n_mean, _, abo = _stats(sel, frames, o_t)
        at_st = [r[3] for r in k_curve if r[2] == _fmt(s_op)] or [r[3] for r in k_curve]
        report.append({"scorer": name, "recall": rec, "n_mean": n_mean, "abo": abo,
                       "topk_recall_mean": float(np.mean(at_st))})
        log.info("%s: recall %.3f with %.1f proposals per frame", name, rec, n_mean)
    out.curve("threshold", ["scorer", "t_o", "s_t"] + STATS, th_rows)
    out.curve("topk", ["scorer", "k", "s_t"] + STATS, k_rows)
    header = ["scorer", "recall", "n_mean", "abo", "topk_recall_mean"]
    out.report(header, [[r[h] for h in header] for r in report])
    return report
