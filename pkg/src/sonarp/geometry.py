"""Boxes, overlap, objectness labels, sliding windows, selection and NMS."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box; ``(x, y)`` is the top-left pixel."""

    x: int
    y: int
    w: int
    h: int
    label: int | None = None
    score: float | None = None

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box extents must be positive, got w={self.w} h={self.h}")
        if self.score is not None and not 0.0 <= self.score <= 1.0:
            raise ValueError(f"box score {self.score} outside [0, 1]")

    @property
    def area(self) -> int:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return self.x + self.w / 2, self.y + self.h / 2

    def with_score(self, score: float) -> "BoundingBox":
        return replace(self, score=float(score))

    def with_label(self, label: int | None) -> "BoundingBox":
        return replace(self, label=label)

    def corners(self):
        x1, y1 = self.x + self.w - 1, self.y + self.h - 1
        return ((self.x, self.y), (x1, self.y), (self.x, y1), (x1, y1))

    def to_dict(self) -> dict:
        d = {"x": self.x, "y": self.y, "w": self.w, "h": self.h}
        if self.label is not None:
            d["label"] = self.label
        if self.score is not None:
            d["score"] = self.score
        return d


@dataclass(frozen=True)
class ObjectnessMap:
    """Dense objectness raster; cell ``(i, j)`` sits at frame pixel
    ``(stride*i + origin, stride*j + origin)``."""

    values: np.ndarray
    stride: int
    origin: int

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError("objectness map must be 2-D")
        if np.any(self.values < 0) or np.any(self.values > 1):
            raise ValueError("objectness values outside [0, 1]")


def as_array(boxes: Sequence[BoundingBox]) -> np.ndarray:
    """``(N, 4)`` float array of ``x, y, w, h``."""
    if len(boxes) == 0:
        return np.zeros((0, 4))
    return np.array([(b.x, b.y, b.w, b.h) for b in boxes], dtype=np.float64)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(a, b) -> np.ndarray:
    """Pairwise IoU between two box collections (lists or ``(N, 4)`` arrays)."""
    a = a if isinstance(a, np.ndarray) else as_array(a)
    b = b if isinstance(b, np.ndarray) else as_array(b)
    ax0, ay0, aw, ah = (a[:, i:i + 1] for i in range(4))
    bx0, by0, bw, bh = (b[:, i] for i in range(4))
    iw = np.clip(np.minimum(ax0 + aw, bx0 + bw) - np.maximum(ax0, bx0), 0, None)
    ih = np.clip(np.minimum(ay0 + ah, by0 + bh) - np.maximum(ay0, by0), 0, None)
    inter = iw * ih
    return inter / (aw * ah + bw * bh - inter)


def objectness_label(value, eps: float = 0.2):
    """Squash an IoU into an objectness target: 1 at or above ``1 - eps``,
    0 at or below ``eps``, the IoU itself in between."""
    if not 0 < eps < 0.5:
        raise ValueError(f"eps must lie in (0, 0.5), got {eps}")
    v = np.asarray(value, dtype=np.float64)
    out = np.where(v >= 1 - eps, 1.0, np.where(v <= eps, 0.0, v))
    return float(out) if out.ndim == 0 else out


def sliding_windows(frame_shape: tuple[int, int], mask: np.ndarray | None = None,
                    window: int = 96, stride: int = 8) -> list[BoundingBox]:
    """Grid windows in row-major order.  With a mask, a window is kept only
    when all four corner pixels are inside the field of view."""
    h, w = frame_shape
    if h < window or w < window:
        raise ValueError(f"frame {h}x{w} smaller than the {window}px window")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    ys = np.arange(0, h - window + 1, stride)
    xs = np.arange(0, w - window + 1, stride)
    if mask is None:
        keep = np.ones((len(ys), len(xs)), dtype=bool)
    else:
        if mask.shape != (h, w):
            raise ValueError(f"mask shape {mask.shape} does not match frame {(h, w)}")
        m = mask.astype(bool)
        y0, y1 = ys[:, None], ys[:, None] + window - 1
        x0, x1 = xs[None, :], xs[None, :] + window - 1
        keep = m[y0, x0] & m[y0, x1] & m[y1, x0] & m[y1, x1]
    iy, ix = np.nonzero(keep)
    return [BoundingBox(int(xs[j]), int(ys[i]), window, window) for i, j in zip(iy, ix)]


def max_iou(windows, gt) -> np.ndarray:
    if len(windows) == 0:
        return np.zeros(0)
    if len(gt) == 0:
        return np.zeros(len(windows))
    return iou_matrix(windows, gt).max(axis=1)


def label_windows(windows: Sequence[BoundingBox], gt: Sequence[BoundingBox], eps: float = 0.2) -> np.ndarray:
    """Objectness target for each window from its best overlap with ground truth."""
    return np.atleast_1d(objectness_label(max_iou(windows, gt), eps))


def _check_scored(boxes):
    for b in boxes:
        if b.score is None:
            raise ValueError(f"unscored proposal {b}")


def select_by_threshold(scored: Sequence[BoundingBox], t_o: float) -> list[BoundingBox]:
    _check_scored(scored)
    return [b for b in scored if b.score >= t_o]


def select_top_k(scored: Sequence[BoundingBox], k: int) -> list[BoundingBox]:
    """The ``k`` best boxes; equal scores keep their input order."""
    if k < 0:
        raise ValueError("k must be >= 0")
    _check_scored(scored)
    order = sorted(range(len(scored)), key=lambda i: -scored[i].score)
    return [scored[i] for i in order[:k]]


def nms(proposals: Sequence[BoundingBox], s_t: float) -> list[BoundingBox]:
    """Greedy non-maximum suppression.  A box is dropped when its IoU with an
    already kept, higher-scored box is strictly greater than ``s_t``."""
    if not 0 < s_t <= 1:
        raise ValueError(f"S_t must lie in (0, 1], got {s_t}")
    _check_scored(proposals)
    if not proposals:
        return []
    order = sorted(range(len(proposals)), key=lambda i: -proposals[i].score)
    ov = iou_matrix(as_array(proposals), as_array(proposals))
    alive = np.ones(len(proposals), dtype=bool)
    kept = []
    for i in order:
        if not alive[i]:
            continue
        kept.append(proposals[i])
        alive &= ~(ov[i] > s_t)
    return kept


PROPOSAL_FIELDS = ["image_id", "x", "y", "w", "h", "score", "class"]


def write_proposals(path, rows: Iterable[tuple[str, BoundingBox]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PROPOSAL_FIELDS)
        for image_id, b in rows:
            w.writerow([image_id, b.x, b.y, b.w, b.h, f"{b.score:.6f}",
                        "" if b.label is None else b.label])


def read_proposals(path) -> list[tuple[str, BoundingBox]]:
    out = []
    with open(Path(path), newline="") as fh:
        for row in csv.DictReader(fh):
            label = row.get("class") or None
            out.append((row["image_id"], BoundingBox(
                int(row["x"]), int(row["y"]), int(row["w"]), int(row["h"]),
                label=None if label is None else int(label), score=float(row["score"]))))
    return out
