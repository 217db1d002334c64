"""End-to-end detection with the dual-head network: objectness proposals plus
per-proposal class decisions, swept over the threshold and the multi-task
weight gamma.  Optionally the class head is swapped for a linear SVM on the
frozen trunk features."""

from __future__ import annotations

import numpy as np

from ..geometry import nms, select_by_threshold, sliding_windows
from ..metrics import detection_accuracy, proposal_stats
from ..netzoo import Network
from ..svm import LinearSVM, l2_normalize
from ..synth import BACKGROUND, make_detection_set
from ..train import train
from .common import Outputs, build_network, frames_for, log
from .spec import ExperimentSpec


def _crops(image, windows, s):
    return np.stack([image[b.y:b.y + s, b.x:b.x + s] for b in windows])[:, None].astype(np.float32)


def trunk_features(net: Network, x: np.ndarray, batch_size: int = 128) -> np.ndarray:
    trunk = net.body.trunk
    return np.concatenate([trunk.forward(x[i:i + batch_size], train=False)
                           for i in range(0, len(x), batch_size)])


def detect_windows(net: Network, image, windows, svm: LinearSVM | None = None, batch_size: int = 256):
    """Objectness and an object class for every window.  The class is the
    best non-background class of the class head, or the SVM's vote."""
    if not windows:
        return np.zeros(0), np.zeros(0, dtype=int)
    s = net.input_shape[1]
    objs, classes = [], []
    for i in range(0, len(windows), batch_size):
        x = _crops(image, windows[i:i + batch_size], s)
        obj, prob = net.predict(x, batch_size)
        objs.append(obj.reshape(-1))
        if svm is None:
            classes.append(prob[:, :BACKGROUND].argmax(axis=1))
        else:
            classes.append(svm.predict(l2_normalize(trunk_features(net, x))))
    return np.clip(np.concatenate(objs).astype(np.float64), 0, 1), np.concatenate(classes)


def labelled_windows(net, frame, svm=None, window=96, stride=8):
    wins = sliding_windows(frame.image.shape, frame.mask, window, stride)
    obj, cls = detect_windows(net, frame.image, wins, svm)
    return [b.with_score(float(o)).with_label(int(c)) for b, o, c in zip(wins, obj, cls)]


def evaluate(per_frame, frames, t_grid, s_t, o_t=0.5):
    """Rows of (t_o, recall, accuracy, n_mean) for pre-scored, labelled windows."""
    rows = []
    for t_o in t_grid:
        sel = [select_by_threshold(w, t_o) for w in per_frame]
        if s_t is not None:
            sel = [nms(p, s_t) for p in sel]
        pairs = [(p, f.boxes) for p, f in zip(sel, frames)]
        st = proposal_stats(pairs, o_t)
        rows.append((t_o, st.recall, detection_accuracy(pairs, o_t), st.n_mean))
    return rows


def _fit_svm(net, ds, C):
    keep = ds.y_cls != BACKGROUND
    feats = l2_normalize(trunk_features(net, ds.x[keep]))
    return LinearSVM(C=C).fit(feats, ds.y_cls[keep])


def run_detector(spec: ExperimentSpec) -> list[dict]:
    out = Outputs(spec.out_dir)
    o_t = float(spec.opt("o_t", 0.5))
    s_t = spec.opt("s_t", 0.7)
    t_op = float(spec.opt("t_o", 0.5))
    use_svm = bool(spec.opt("svm", False))
    classes = BACKGROUND + 1
    ds = make_detection_set(frames_for(spec, "train", 30), seed=spec.seed, eps=float(spec.opt("eps", 0.2)))
    test = frames_for(spec, "test", 20)
    t_grid = spec.grid("t_o")
    curve, report = [], []
    for gamma in spec.grid("gamma"):
        net = build_network({"builder": "detector", "classes": classes, **spec.network}, spec.seed)
        tc = spec.train_config(epochs=3, lr=0.001, batch_size=64, loss="multitask", gamma=float(gamma))
        hist = train(net, ds.x, (ds.y_obj, ds.y_cls), tc, metric=None)
        tag = f"gamma{gamma}"
        out.train_log(f"train_log_{tag}", hist)
        out.model(f"detector_{tag}", net)
        heads = {"fc": None}
        if use_svm:
            heads["svm"] = _fit_svm(net, ds, float(spec.opt("C", 1.0)))
        row = {"gamma": gamma}
        for head, svm in heads.items():
            per_frame = [labelled_windows(net, f, svm) for f in test]
            for t_o, rec, acc, n in evaluate(per_frame, test, t_grid, s_t, o_t):
                curve.append([gamma, head, t_o, rec, acc, n])
            (_, rec, acc, n), = evaluate(per_frame, test, [t_op], s_t, o_t)
            row.update({"recall": rec, "n_mean": n, f"acc_{head}": acc})
        if use_svm:
            row["svm_minus_fc"] = row["acc_svm"] - row["acc_fc"]
        log.info("detector gamma=%s: %s", gamma, row)
        report.append(row)
    out.curve("detection", ["gamma", "head", "t_o", "recall", "accuracy", "n_mean"], curve)
    header = ["gamma", "recall", "n_mean", "acc_fc"] + (["acc_svm", "svm_minus_fc"] if use_svm else [])
    out.report(header, [[r[h] for h in header] for r in report])
    return report
