"""Evaluation metrics: accuracy, detection recall, ABO, ROC/AUC, CTF, timing."""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .geometry import BoundingBox, iou, iou_matrix


def accuracy(pred, labels) -> float:
    pred, labels = np.asarray(pred), np.asarray(labels)
    if pred.shape != labels.shape:
        raise ValueError(f"length mismatch {pred.shape} vs {labels.shape}")
    if pred.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(pred == labels))


def match_ground_truth(proposals: Sequence[BoundingBox], gt: Sequence[BoundingBox],
                       o_t: float = 0.5) -> np.ndarray:
    """One-to-one greedy matching by descending IoU (ties: lower GT index,
    then lower proposal index).  Returns the matched proposal index per GT,
    or -1."""
    out = np.full(len(gt), -1, dtype=int)
    if not len(gt) or not len(proposals):
        return out
    ov = iou_matrix(list(gt), list(proposals))
    gi, pi = np.nonzero(ov >= o_t)
    order = np.lexsort((pi, gi, -ov[gi, pi]))
    used = np.zeros(len(proposals), dtype=bool)
    for k in order:
        g, p = gi[k], pi[k]
        if out[g] < 0 and not used[p]:
            out[g] = p
            used[p] = True
    return out


def detection_recall(proposals, gt, o_t: float = 0.5) -> float:
    """Fraction of ground-truth boxes matched at IoU >= ``o_t``; 1.0 without GT."""
    if not len(gt):
        return 1.0
    return float(np.mean(match_ground_truth(proposals, gt, o_t) >= 0))


def detection_accuracy(per_image, o_t: float = 0.5) -> float:
    """Ground-truth boxes whose matched proposal carries the right label,
    over all ground-truth boxes (pooled across images)."""
    hits = total = 0
    for props, gt in per_image:
        m = match_ground_truth(props, gt, o_t)
        hits += sum(1 for g, k in zip(gt, m) if k >= 0 and props[k].label == g.label)
        total += len(gt)
    return hits / total if total else 1.0


def average_best_overlap(gt, proposals) -> float:
    if not len(gt):
        raise ValueError("average best overlap is undefined without ground truth")
    if not len(proposals):
        return 0.0
    return float(iou_matrix(list(gt), list(proposals)).max(axis=1).mean())


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


def roc_auc(scores, labels) -> RocCurve:
    """ROC over the distinct score thresholds, AUC by trapezoids (equal to
    the rank statistic with ties counted as one half)."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both positive and negative samples")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thr = np.r_[np.inf, s[last]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
    return RocCurve(fpr, tpr, thr, auc)


def ctf(pred: Sequence[BoundingBox | None], gt: Sequence[BoundingBox | None], o_t: float = 0.5) -> float:
    """Fraction of frames whose predicted box overlaps ground truth at >= ``o_t``."""
    if len(pred) != len(gt):
        raise ValueError(f"{len(pred)} predictions for {len(gt)} frames")
    if not gt:
        raise ValueError("no frames")
    ok = [p is not None and g is not None and iou(p, g) >= o_t for p, g in zip(pred, gt)]
    return float(np.mean(ok))


def bench(op: Callable[[], object], repetitions: int = 100) -> tuple[float, float]:
    """Mean and standard deviation in milliseconds; one untimed warm-up call."""
    if repetitions < 2:
        raise ValueError("need at least two repetitions")
    op()
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        op()
        times.append((time.perf_counter() - t0) * 1e3)
    return statistics.fmean(times), statistics.stdev(times)


@dataclass
class ProposalStats:
    recall: float
    n_mean: float
    n_std: float
    abo: float


def proposal_stats(per_image: Sequence[tuple[Sequence[BoundingBox], Sequence[BoundingBox]]],
                   o_t: float = 0.5) -> ProposalStats:
    """Aggregate over images of (proposals, ground truth).  Recall pools all
    GT objects; images without GT are left out of ABO."""
    hits = total = 0
    counts, abos = [], []
    for props, gt in per_image:
        counts.append(len(props))
        if len(gt):
            hits += int((match_ground_truth(props, gt, o_t) >= 0).sum())
            total += len(gt)
            abos.append(average_best_overlap(gt, props))
    recall = hits / total if total else 1.0
    return ProposalStats(recall, float(np.mean(counts)) if counts else 0.0,
                         float(np.std(counts)) if counts else 0.0,
                         float(np.mean(abos)) if abos else 0.0)


def write_rows(path, header: list[str], rows) -> None:
    """CSV with fixed float formatting so reruns are byte-identical."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([f"{v:.6f}" if isinstance(v, (float, np.floating)) else v for v in r])
