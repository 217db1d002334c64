"""Window scorers (patch CNN, FCN map, template matching) and the
proposal pipeline: windows -> scores -> selection -> NMS."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import (BoundingBox, ObjectnessMap, nms, select_by_threshold,
                       select_top_k, sliding_windows)
from .netzoo import Network
from .tmatch import TemplateSet, tm_objectness_map


def upsample_map(omap: ObjectnessMap, frame_shape: tuple[int, int]) -> np.ndarray:
    """Bilinear resampling of a map onto every frame pixel; positions beyond
    the outermost cells take the edge value."""
    h, w = frame_shape
    rows = (np.arange(h) - omap.origin) / omap.stride
    cols = (np.arange(w) - omap.origin) / omap.stride
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    out = ndimage.map_coordinates(omap.values.astype(np.float64), [rr, cc], order=1, mode="nearest")
    return np.clip(out, 0.0, 1.0)


def sample_map(raster: np.ndarray, windows, window: int = 96) -> np.ndarray:
    """Read a full-resolution raster at the window centers."""
    half = window // 2
    ys = np.array([b.y + half for b in windows], dtype=int)
    xs = np.array([b.x + half for b in windows], dtype=int)
    return raster[ys, xs] if len(windows) else np.zeros(0)


class PatchScorer:
    """Runs a patch network on every window crop."""

    kind = "patch"

    def __init__(self, net: Network, batch_size: int = 256):
        if net.output not in ("objectness", "score", "dual"):
            raise ValueError(f"network output {net.output!r} is not a scalar objectness")
        self.net, self.batch_size = net, batch_size
        self.window = net.input_shape[1]

    def score(self, image: np.ndarray, windows) -> np.ndarray:
        if not windows:
            return np.zeros(0)
        out = []
        s = self.window
        for i in range(0, len(windows), self.batch_size):
            chunk = windows[i:i + self.batch_size]
            x = np.stack([image[b.y:b.y + s, b.x:b.x + s] for b in chunk])[:, None].astype(np.float32)
            p = self.net.predict(x, self.batch_size)
            if isinstance(p, tuple):
                p = p[0]
            out.append(p.reshape(-1))
        return np.clip(np.concatenate(out).astype(np.float64), 0, 1)


class MapScorer:
    """Base for scorers that produce a dense map and read it at window centers."""

    window = 96

    def objectness_map(self, image: np.ndarray) -> ObjectnessMap:
        raise NotImplementedError

    def score(self, image: np.ndarray, windows) -> np.ndarray:
        if not windows:
            return np.zeros(0)
        raster = upsample_map(self.objectness_map(image), image.shape)
        return sample_map(raster, windows, self.window)


class FcnScorer(MapScorer):
    kind = "fcn"

    def __init__(self, fcn: Network):
        if fcn.output != "objectness_map":
            raise ValueError("FcnScorer needs a converted (fully convolutional) network")
        self.net = fcn
        self.window = fcn.meta["window"]

    def objectness_map(self, image):
        out = self.net.forward(image[None, None].astype(np.float32), train=False)
        return ObjectnessMap(np.clip(out[0, 0].astype(np.float64), 0, 1),
                             self.net.meta["map_stride"], self.net.meta["map_origin"])


class TemplateScorer(MapScorer):
    kind = "tm"

    def __init__(self, templates: TemplateSet, n: int = 100):
        self.templates, self.n = templates, n
        self.window = templates.patches.shape[-1]

    def objectness_map(self, image):
        return tm_objectness_map(image, self.templates, self.n)


class ConstantScorer(MapScorer):
    """Uniform map, handy as a reference and in tests."""

    kind = "constant"

    def __init__(self, value: float, window: int = 96):
        self.value, self.window = float(value), window

    def objectness_map(self, image):
        h, w = image.shape
        return ObjectnessMap(np.full((h, w), self.value), 1, 0)


def score_windows(image: np.ndarray, windows, scorer) -> list[BoundingBox]:
    scores = scorer.score(image, windows)
    return [b.with_score(float(s)) for b, s in zip(windows, scores)]


@dataclass
class ProposalConfig:
    window: int = 96
    stride: int = 8
    t_o: float | None = 0.5
    k: int | None = None
    s_t: float | None = 0.7


def propose(image: np.ndarray, mask, scorer, cfg: ProposalConfig) -> list[BoundingBox]:
    """Score the window grid, then threshold, NMS and keep the top k."""
    wins = sliding_windows(image.shape, mask, cfg.window, cfg.stride)
    scored = score_windows(image, wins, scorer)
    return select(scored, cfg)


def select(scored, cfg: ProposalConfig) -> list[BoundingBox]:
    out = scored
    if cfg.t_o is not None:
        out = select_by_threshold(out, cfg.t_o)
    if cfg.s_t is not None:
        out = nms(out, cfg.s_t)
    if cfg.k is not None:
        out = select_top_k(out, cfg.k)
    return out
