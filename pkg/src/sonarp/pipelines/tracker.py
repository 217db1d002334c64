"""Tracking by matching: the first frame's best proposal becomes a fixed
template; in every later frame the top proposals are matched against it and
the best match is the tracked box."""

from __future__ import annotations

import csv
from dataclasses import replace

import numpy as np

from ..geometry import BoundingBox, nms, select_top_k, sliding_windows
from ..metrics import ctf
from ..netzoo import Network
from ..proposals import score_windows
from ..serialize import load_model
from ..synth import generate_sequence
from ..tmatch import DegenerateInputError, cc_similarity
from .common import Outputs, log
from .matching import match_scores, train_matcher
from .proposals import objectness_scorer
from .spec import ExperimentSpec


class CnnMatcher:
    """Matcher network; a pair matches when its probability exceeds 0.5."""

    threshold = 0.5

    def __init__(self, net: Network):
        self.net = net

    def scores(self, template, crops) -> np.ndarray:
        t = np.broadcast_to(template, crops.shape)
        return match_scores(self.net, np.stack([t, crops], axis=1).astype(np.float32))


class CcMatcher:
    """Normalized cross-correlation; a match needs CC above 0.01."""

    threshold = 0.01

    def scores(self, template, crops) -> np.ndarray:
        out = np.full(len(crops), -np.inf)
        for i, c in enumerate(crops):
            try:
                out[i] = cc_similarity(template, c)
            except DegenerateInputError:
                pass
        return out


def _proposals(frame, scorer, k, s_t, window, stride):
    wins = sliding_windows(frame.image.shape, frame.mask, window, stride)
    return select_top_k(nms(score_windows(frame.image, wins, scorer), s_t), k)


def track(frames, scorer, matcher, k: int = 10, s_t: float = 0.7, window: int = 96,
          stride: int = 8) -> list[tuple[BoundingBox | None, float | None]]:
    """(box, match score) per frame; ``None`` where nothing matched."""
    out = []
    first = _proposals(frames[0], scorer, 1, s_t, window, stride)
    if not first:
        return [(None, None)] * len(frames)
    b = first[0]
    template = frames[0].image[b.y:b.y + window, b.x:b.x + window]
    out.append((b, None))
    for fr in frames[1:]:
        props = _proposals(fr, scorer, k, s_t, window, stride)
        if not props:
            out.append((None, None))
            continue
        crops = np.stack([fr.image[p.y:p.y + window, p.x:p.x + window] for p in props])
        s = matcher.scores(template, crops)
        ok = s > matcher.threshold
        if not ok.any():
            out.append((None, None))
            continue
        # proposals are in descending objectness, so the first best wins ties
        i = int(np.flatnonzero(ok & (s == s[ok].max()))[0])
        out.append((props[i], float(s[i])))
    return out


def _sub(spec: ExperimentSpec, part: str) -> ExperimentSpec:
    return replace(spec, network=spec.opt(f"{part}_network", {}), train=spec.opt(f"{part}_train", spec.train))


def run_tracker(spec: ExperimentSpec, frames=None, scorer=None, matchers: dict | None = None) -> list[dict]:
    methods = list(spec.opt("methods", ["cnn", "cc"]))
    if matchers is None and set(methods) - {"cnn", "cc"}:
        raise ValueError(f"unknown tracking method(s) {sorted(set(methods) - {'cnn', 'cc'})}")
    out = Outputs(spec.out_dir)
    if frames is None:
        frames = generate_sequence(spec.scene_config(), int(spec.opt("n_frames", 20)), seed=spec.seed,
                                   drift=tuple(spec.opt("drift", (1.5, 2.0))),
                                   distractors=int(spec.opt("distractors", 1)))
    if scorer is None:
        scorer = objectness_scorer(_sub(spec, "objectness"), out, key="objectness_model")
    if matchers is None:
        matchers = {}
        for m in methods:
            if m == "cc":
                matchers["cc"] = CcMatcher()
            else:
                path = spec.opt("matcher_model")
                net = load_model(path) if path else train_matcher(_sub(spec, "matcher"), out=out)
                matchers["cnn"] = CnnMatcher(net)
    gt = [f.boxes[0] for f in frames]
    k, s_t = int(spec.opt("k", 10)), float(spec.opt("s_t", 0.7))
    o_op = float(spec.opt("o_t", 0.5))
    curve, report = [], []
    with open(out.root / "tracks.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "frame", "x", "y", "w", "h", "objectness", "match"])
        for name, matcher in matchers.items():
            res = track(frames, scorer, matcher, k, s_t)
            boxes = [b for b, _ in res]
            for f, (b, s) in zip(frames, res):
                w.writerow([name, f.id] + (["", "", "", "", "", ""] if b is None else
                           [b.x, b.y, b.w, b.h, f"{b.score:.6f}", "" if s is None else f"{s:.6f}"]))
            for o_t in spec.grid("o_t"):
                curve.append([name, o_t, ctf(boxes, gt, o_t)])
            row = {"method": name, "ctf": ctf(boxes, gt, o_op),
                   "tracked": sum(b is not None for b in boxes), "frames": len(frames)}
            log.info("tracker %s: CTF %.3f", name, row["ctf"])
            report.append(row)
    out.curve("ctf", ["method", "o_t", "ctf"], curve)
    header = ["method", "ctf", "tracked", "frames"]
    out.report(header, [[r[h] for h in header] for r in report])
    return report
