"""Transfer learning: features from a network trained on one class split,
linear SVM on another split."""

from __future__ import annotations

import numpy as np

from ..metrics import accuracy
from ..svm import LinearSVM, l2_normalize
from ..synth import PatchSet
from ..train import train
from .classification import DEFAULT_NET, classification_sets, subsample
from .common import Outputs, build_network, log
from .spec import ExperimentSpec


def _restrict(ps: PatchSet, classes) -> PatchSet:
    keep = np.isin(ps.y, classes)
    remap = {c: i for i, c in enumerate(classes)}
    return PatchSet(ps.x[keep], np.array([remap[c] for c in ps.y[keep]], dtype=int))


def run_transfer(spec: ExperimentSpec) -> list[dict]:
    out = Outputs(spec.out_dir)
    mode = spec.opt("mode", "disjoint")
    feat_classes = list(spec.opt("feature_classes", [0, 1, 2, 3, 4]))
    target_classes = list(spec.opt("target_classes", [5, 6, 7, 8, 9]))
    if mode == "shared":
        target_classes = feat_classes
    elif mode != "disjoint":
        raise ValueError(f"unknown transfer mode {mode!r}")
    spc_grid = [int(v) for v in spec.grid("spc")] or [int(spec.data_option("spc", 30))]
    feature_spc = int(spec.data_option("feature_spc", 60))
    sets = classification_sets(spec, max(feature_spc, max(spc_grid)))
    net_cfg = {**DEFAULT_NET, **spec.network, "classes": len(feat_classes)}
    net = build_network(net_cfg, spec.seed)
    layers = list(spec.opt("layers", ["mp2", "fc1_relu"]))
    for name in layers:
        net.layer(name)  # raises KeyError for unknown layers
    if spec.opt("pretrained", True):
        f_train = subsample(_restrict(sets["train"], feat_classes), feature_spc, np.random.default_rng(spec.seed))
        hist = train(net, f_train.x, f_train.y, spec.train_config(epochs=10, lr=0.01, batch_size=64))
        out.train_log("feature_net_log", hist)
    out.model("feature_net", net)
    t_train_all = _restrict(sets["train"], target_classes)
    # shared mode tests on held-out samples of the same classes
    t_test = _restrict(sets["test"], target_classes)
    rows = []
    for spc in spc_grid:
        t_train = subsample(t_train_all, spc, np.random.default_rng([spec.seed, spc]))
        for name in layers:
            f_tr = l2_normalize(net.features(t_train.x, name))
            f_te = l2_normalize(net.features(t_test.x, name))
            svm = LinearSVM(C=float(spec.opt("C", 1.0))).fit(f_tr, t_train.y)
            acc = accuracy(svm.predict(f_te), t_test.y)
            log.info("transfer layer=%s spc=%d: accuracy %.4f", name, spc, acc)
            rows.append({"layer": name, "spc": spc, "dims": f_tr.shape[1], "accuracy": acc})
    header = ["layer", "spc", "dims", "accuracy"]
    out.report(header, [[r[h] for h in header] for r in rows])
    return rows
