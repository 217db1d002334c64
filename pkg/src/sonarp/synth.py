"""Seeded synthetic forward-looking-sonar scenes and their dataset IO.

A frame is a polar sector (apex below the bottom edge) filled with
multiplicative speckle over a dim floor.  Objects are bright parametric
highlights, one shape family per class, with an optional acoustic shadow
cast away from the sensor."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .geometry import BoundingBox, iou_matrix, objectness_label, sliding_windows

CLASS_NAMES = ["bottle", "can", "chain", "drink-carton", "hook", "propeller",
               "shampoo-bottle", "standing-bottle", "tire", "valve", "background"]
BACKGROUND = 10
N_OBJECT_CLASSES = 10


class DatasetError(ValueError):
    """Malformed or incomplete dataset directory."""


class PlacementError(RuntimeError):
    """Objects could not be placed without overlap."""


@dataclass
class SceneConfig:
    height: int = 320
    width: int = 480
    apex_y: float = 340.0
    apex_x: float = 240.0
    r_min: float = 40.0
    r_max: float = 335.0
    half_angle: float = 50.0  # degrees
    n_classes: int = N_OBJECT_CLASSES
    objects_min: int = 1
    objects_max: int = 3
    size_min: int = 60
    size_max: int = 88
    min_area: int = 5200
    floor: float = 0.16
    highlight: float = 0.9
    speckle: float = 1.0
    shadow_prob: float = 0.5
    clutter: int = 3
    window: int = 96
    stride: int = 8
    max_tries: int = 200

    def __post_init__(self):
        if not self.r_min < self.r_max:
            raise ValueError("r_min must be smaller than r_max")
        if not 1 <= self.objects_min <= self.objects_max:
            raise ValueError("need 1 <= objects_min <= objects_max")
        if not 2 <= self.n_classes <= N_OBJECT_CLASSES:
            raise ValueError(f"n_classes must lie in [2, {N_OBJECT_CLASSES}]")
        if self.size_max > self.window:
            raise ValueError("objects must fit inside a window")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scene config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SonarFrame:
    image: np.ndarray  # (H, W) float32 in [0, 1]
    mask: np.ndarray   # (H, W) bool field of view
    boxes: list[BoundingBox] = field(default_factory=list)
    id: str = "frame"

    @property
    def tensor(self) -> np.ndarray:
        return self.image[None]


def _geom_key(cfg: SceneConfig):
    return (cfg.height, cfg.width, cfg.apex_y, cfg.apex_x, cfg.r_min, cfg.r_max,
            cfg.half_angle, cfg.window, cfg.stride)


@lru_cache(maxsize=8)
def _sector(key):
    height, width, apex_y, apex_x, r_min, r_max, half_angle, window, stride = key
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    dy, dx = apex_y - yy, xx - apex_x
    r = np.hypot(dx, dy)
    ang = np.degrees(np.arctan2(np.abs(dx), dy))
    mask = (r >= r_min) & (r <= r_max) & (ang <= half_angle)
    mask.setflags(write=False)
    # slow range-dependent gain of the floor echo
    gain = 1.0 + 0.25 * np.cos(r / r_max * np.pi)
    gain.setflags(write=False)
    wins = tuple(sliding_windows((height, width), mask, window, stride))
    return mask, gain, wins


def sector_mask(cfg: SceneConfig) -> np.ndarray:
    return _sector(_geom_key(cfg))[0].copy()


def frame_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream per frame so generation order does not matter."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


# ------------------------------------------------------------- shapes
def _seg_dist(yy, xx, p, q):
    (y0, x0), (y1, x1) = p, q
    vy, vx = y1 - y0, x1 - x0
    t = np.clip(((yy - y0) * vy + (xx - x0) * vx) / max(vy * vy + vx * vx, 1e-12), 0, 1)
    return np.hypot(yy - (y0 + t * vy), xx - (x0 + t * vx))


def _stroke(yy, xx, pts, width):
    d = np.full(yy.shape, np.inf)
    for p, q in zip(pts[:-1], pts[1:]):
        d = np.minimum(d, _seg_dist(yy, xx, p, q))
    return d <= width / 2


def _bottle(yy, xx, rng):
    t = rng.uniform(0.4, 0.46)
    a, b = (t / 2, t / 2), (1 - t / 2, 1 - t / 2)
    if rng.random() < 0.5:
        a, b = (t / 2, 1 - t / 2), (1 - t / 2, t / 2)
    return _stroke(yy, xx, [a, b], t)


def _can(yy, xx, rng):
    return (yy - 0.5) ** 2 + (xx - 0.5) ** 2 <= 0.25


def _chain(yy, xx, rng):
    n = rng.integers(5, 7)
    r = rng.uniform(0.15, 0.17)
    ph = rng.uniform(0, 2 * np.pi)
    m = np.zeros(yy.shape, bool)
    for k in range(n):
        cx = r + (1 - 2 * r) * k / (n - 1)
        cy = 0.5 + (0.5 - r) * np.sin(ph + 2 * np.pi * k / (n - 1))
        if k == 0:
            cy = 1 - r if np.sin(ph) >= 0 else r
        m |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    return m


def _carton(yy, xx, rng):
    t = rng.uniform(0.2, 0.26)
    return (yy < t) | (yy > 1 - t) | (xx < t) | (xx > 1 - t)


def _hook(yy, xx, rng):
    t = rng.uniform(0.24, 0.3)
    h = t / 2
    pts = [(h, 1 - h), (1 - h, 1 - h), (1 - h, h), (0.55, h)]
    m = _stroke(yy, xx, pts, t)
    return m[:, ::-1] if rng.random() < 0.5 else m


def _propeller(yy, xx, rng):
    t = rng.uniform(0.28, 0.32)
    a0 = rng.uniform(0, 2 * np.pi / 3)
    m = (yy - 0.5) ** 2 + (xx - 0.5) ** 2 <= 0.22 ** 2
    for k in range(3):
        a = a0 + 2 * np.pi * k / 3
        m |= _stroke(yy, xx, [(0.5, 0.5), (0.5 + 0.5 * np.sin(a), 0.5 + 0.5 * np.cos(a))], t)
    m[0, :] |= (xx[0] > 0.45) & (xx[0] < 0.55)
    m[-1, :] |= (xx[-1] > 0.45) & (xx[-1] < 0.55)
    m[:, 0] |= (yy[:, 0] > 0.45) & (yy[:, 0] < 0.55)
    m[:, -1] |= (yy[:, -1] > 0.45) & (yy[:, -1] < 0.55)
    return m


def _shampoo(yy, xx, rng):
    body = yy >= 0.35
    neck = (np.abs(xx - 0.5) <= 0.16) & (yy < 0.35)
    return body | neck


def _standing_bottle(yy, xx, rng):
    r = 0.27
    top = (yy - r) ** 2 + (xx - r) ** 2 <= r * r
    bot = (yy - 1 + r) ** 2 + (xx - 1 + r) ** 2 <= r * r
    m = top | bot
    return m[:, ::-1] if rng.random() < 0.5 else m


def _tire(yy, xx, rng):
    d = (yy - 0.5) ** 2 + (xx - 0.5) ** 2
    inner = rng.uniform(0.24, 0.3)
    return (d <= 0.25) & (d >= inner ** 2)


def _valve(yy, xx, rng):
    t = rng.uniform(0.28, 0.34)
    return (np.abs(yy - 0.5) <= t / 2) | (np.abs(xx - 0.5) <= t / 2)


SHAPES = [_bottle, _can, _chain, _carton, _hook, _propeller, _shampoo,
          _standing_bottle, _tire, _valve]


def render_shape(label: int, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean ``(h, w)`` highlight mask for class ``label``."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    yy, xx = (yy + 0.5) / h, (xx + 0.5) / w
    return SHAPES[label](yy, xx, rng)


# ------------------------------------------------------------- scenes
@dataclass
class _Object:
    label: int
    box: BoundingBox
    shape: np.ndarray
    shadow: bool
    gain: float


def _valid_windows(cfg: SceneConfig, mask: np.ndarray | None = None) -> list[BoundingBox]:
    return list(_sector(_geom_key(cfg))[2])


def _draw_object(label, cfg, rng):
    for _ in range(cfg.max_tries):
        h, w = (int(v) for v in rng.integers(cfg.size_min, cfg.size_max + 1, size=2))
        if h * w >= cfg.min_area:
            break
    shape = render_shape(label, h, w, rng)
    return h, w, shape


def _place(h, w, windows, taken, rng, cfg):
    for _ in range(cfg.max_tries):
        win = windows[rng.integers(len(windows))]
        x = win.x + int(rng.integers(0, cfg.window - w + 1))
        y = win.y + int(rng.integers(0, cfg.window - h + 1))
        box = BoundingBox(x, y, w, h)
        pad = BoundingBox(x - 6, y - 6, w + 12, h + 12)
        if not taken or iou_matrix([pad], taken).max() == 0:
            return box
    return None


def _compose(cfg, mask, objects, rng, clutter=()):
    """Clean reflectivity, speckle, smoothing and clipping."""
    gain = _sector(_geom_key(cfg))[1]
    clean = cfg.floor * gain
    shade = np.ones_like(clean)
    hgt, wid = clean.shape
    for ob in objects:
        b = ob.box
        if ob.shadow:
            cy, cx = b.y + b.h / 2, b.x + b.w / 2
            uy, ux = cy - cfg.apex_y, cx - cfg.apex_x
            n = math.hypot(uy, ux) or 1.0
            sy, sx = int(round(uy / n * 14)), int(round(ux / n * 14))
            y0, x0 = b.y + sy, b.x + sx
            ys0, xs0 = max(y0, 0), max(x0, 0)
            ys1, xs1 = min(y0 + b.h, hgt), min(x0 + b.w, wid)
            if ys1 > ys0 and xs1 > xs0:
                sub = ob.shape[ys0 - y0:ys1 - y0, xs0 - x0:xs1 - x0]
                shade[ys0:ys1, xs0:xs1][sub] = 0.3
    for ob in objects:
        b = ob.box
        region = clean[b.y:b.y + b.h, b.x:b.x + b.w]
        region[ob.shape] = cfg.highlight * ob.gain
        shade[b.y:b.y + b.h, b.x:b.x + b.w][ob.shape] = 1.0
    for (cy, cx, r, v) in clutter:
        ri = int(math.ceil(r))
        y0, x0 = max(cy - ri, 0), max(cx - ri, 0)
        yy, xx = np.mgrid[y0:min(cy + ri + 1, hgt), x0:min(cx + ri + 1, wid)]
        clean[yy, xx] = np.where((yy - cy) ** 2 + (xx - cx) ** 2 <= r * r, v, clean[yy, xx])
    clean *= shade
    if cfg.speckle > 0:
        noise = rng.exponential(1.0, size=clean.shape)
        noise = 1.0 + cfg.speckle * (noise - 1.0)
        img = ndimage.uniform_filter(clean * noise, size=3, mode="nearest")
    else:
        img = clean
    img = np.clip(img, 0.0, 1.0)
    img[~mask] = 0.0
    return img.astype(np.float32)


def _clutter(cfg, mask, boxes, rng):
    out = []
    ys, xs = np.nonzero(mask)
    for _ in range(cfg.clutter):
        for _ in range(50):
            k = rng.integers(len(ys))
            cy, cx, r = int(ys[k]), int(xs[k]), float(rng.uniform(2, 5))
            if not boxes or iou_matrix([BoundingBox(cx - 12, cy - 12, 24, 24)], boxes).max() == 0:
                out.append((cy, cx, r, float(rng.uniform(0.4, 0.6))))
                break
    return out


def _tight(box: BoundingBox, shape: np.ndarray, label: int) -> BoundingBox:
    rows, cols = np.nonzero(shape.any(1))[0], np.nonzero(shape.any(0))[0]
    return BoundingBox(box.x + int(cols[0]), box.y + int(rows[0]),
                       int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1), label=label)


def generate_scene(cfg: SceneConfig, rng: np.random.Generator, labels=None,
                   n_objects: int | None = None, frame_id: str = "frame") -> SonarFrame:
    """One frame.  ``labels`` fixes the object classes; otherwise the count is
    drawn from the configured range (or ``n_objects``) with random classes."""
    mask = sector_mask(cfg)
    if labels is None:
        if n_objects is None:
            n_objects = int(rng.integers(cfg.objects_min, cfg.objects_max + 1))
        labels = [int(v) for v in rng.integers(0, cfg.n_classes, size=n_objects)]
    windows = _valid_windows(cfg, mask)
    if labels and not windows:
        raise PlacementError("no valid window inside the field of view")
    objects, taken = [], []
    for lab in labels:
        h, w, shape = _draw_object(lab, cfg, rng)
        box = _place(h, w, windows, taken, rng, cfg)
        if box is None:
            raise PlacementError(f"could not place {len(labels)} objects without overlap")
        taken.append(box)
        objects.append(_Object(lab, box, shape, bool(rng.random() < cfg.shadow_prob),
                               float(rng.uniform(0.9, 1.1))))
    clutter = _clutter(cfg, mask, taken, rng)
    img = _compose(cfg, mask, objects, rng, clutter)
    boxes = [_tight(o.box, o.shape, o.label) for o in objects]
    return SonarFrame(img, mask, boxes, frame_id)


def generate_frames(cfg: SceneConfig, n: int, seed: int, prefix: str = "frame") -> list[SonarFrame]:
    return [generate_scene(cfg, frame_rng(seed, i), frame_id=f"{prefix}_{i:05d}") for i in range(n)]


def generate_sequence(cfg: SceneConfig, n_frames: int, seed: int, label: int | None = None,
                      drift: tuple[float, float] = (1.5, 2.0), distractors: int = 1,
                      prefix: str = "seq") -> list[SonarFrame]:
    """Frames of one object drifting by ``drift`` pixels/frame (dy, dx), plus
    static distractor objects.  Shapes stay fixed; speckle is redrawn."""
    rng = frame_rng(seed, 10 ** 6)
    mask = sector_mask(cfg)
    windows = _valid_windows(cfg, mask)
    label = int(rng.integers(cfg.n_classes)) if label is None else label
    h, w, shape = _draw_object(label, cfg, rng)
    dy, dx = drift
    # start so that the whole path stays in valid windows
    path_ok = None
    for _ in range(cfg.max_tries):
        box = _place(h, w, windows, [], rng, cfg)
        ends = [BoundingBox(int(round(box.x + dx * t)), int(round(box.y + dy * t)), w, h)
                for t in (0, n_frames - 1)]
        if all(_inside(e, mask) for e in ends) and all(_inside(_shift(box, dx * t, dy * t), mask)
                                                       for t in range(n_frames)):
            path_ok = box
            break
    if path_ok is None:
        raise PlacementError("drift path leaves the field of view")
    path = [_shift(path_ok, dx * t, dy * t) for t in range(n_frames)]
    others = []
    sweep = BoundingBox(min(path[0].x, path[-1].x), min(path[0].y, path[-1].y),
                        abs(path[-1].x - path[0].x) + w, abs(path[-1].y - path[0].y) + h)
    for _ in range(distractors):
        lab = int(rng.integers(cfg.n_classes))
        oh, ow, osh = _draw_object(lab, cfg, rng)
        ob = _place(oh, ow, windows, [sweep] + [o.box for o in others], rng, cfg)
        if ob is not None:
            others.append(_Object(lab, ob, osh, False, 1.0))
    shadow = bool(rng.random() < cfg.shadow_prob)
    frames = []
    for t, box in enumerate(path):
        fr = frame_rng(seed, t)
        target = _Object(label, box, shape, shadow, 1.0)
        img = _compose(cfg, mask, [target] + others, fr)
        boxes = [_tight(box, shape, label)] + [_tight(o.box, o.shape, o.label) for o in others]
        frames.append(SonarFrame(img, mask, boxes, f"{prefix}_{t:05d}"))
    return frames


def _shift(b: BoundingBox, dx, dy) -> BoundingBox:
    return BoundingBox(int(round(b.x + dx)), int(round(b.y + dy)), b.w, b.h)


def _inside(b: BoundingBox, mask) -> bool:
    hgt, wid = mask.shape
    if b.x < 0 or b.y < 0 or b.x + b.w > wid or b.y + b.h > hgt:
        return False
    return all(mask[y, x] for x, y in b.corners())


# ------------------------------------------------------------- patches
def crop(image: np.ndarray, cx: float, cy: float, size: int = 96) -> np.ndarray:
    """``size`` square centered on ``(cx, cy)``, shifted to stay in frame."""
    hgt, wid = image.shape
    x = int(np.clip(round(cx - size / 2), 0, wid - size))
    y = int(np.clip(round(cy - size / 2), 0, hgt - size))
    return image[y:y + size, x:x + size]


def resize_patches(x: np.ndarray, size: int) -> np.ndarray:
    """Bilinear downscale of ``(N, 1, s, s)`` patches to ``size``."""
    if x.shape[-1] == size:
        return x
    out = np.empty(x.shape[:2] + (size, size), dtype=np.float32)
    for i in range(x.shape[0]):
        for c in range(x.shape[1]):
            out[i, c] = np.asarray(Image.fromarray(x[i, c].astype(np.float32), mode="F")
                                   .resize((size, size), Image.BILINEAR))
    return out


def background_crops(frame: SonarFrame, n: int, rng, size: int = 96, max_iou: float = 0.1,
                     stride: int = 8) -> list[np.ndarray]:
    wins = sliding_windows(frame.image.shape, frame.mask, size, stride)
    if frame.boxes and wins:
        ok = iou_matrix(wins, frame.boxes).max(axis=1) < max_iou
        wins = [w for w, k in zip(wins, ok) if k]
    if not wins:
        return []
    pick = rng.choice(len(wins), size=min(n, len(wins)), replace=False)
    return [frame.image[wins[i].y:wins[i].y + size, wins[i].x:wins[i].x + size] for i in pick]


@dataclass
class PatchSet:
    x: np.ndarray  # (N, 1, s, s) float32
    y: np.ndarray  # (N,) int


def _object_pool(cfg: SceneConfig, per_class: int, seed: int, size: int = 96, bg_per_frame: int = 1):
    """Object crops (class-balanced) and background crops from fresh scenes."""
    crops = {c: [] for c in range(cfg.n_classes)}
    bg = []
    i = 0
    order = np.random.default_rng(seed).permutation(np.repeat(np.arange(cfg.n_classes), per_class))
    k = 0
    while k < len(order):
        rng = frame_rng(seed, i)
        n = min(int(rng.integers(cfg.objects_min, cfg.objects_max + 1)), len(order) - k)
        labels = [int(v) for v in order[k:k + n]]
        fr = generate_scene(cfg, rng, labels=labels)
        for b in fr.boxes:
            cx, cy = b.center
            crops[b.label].append(crop(fr.image, cx, cy, size))
        bg.extend(background_crops(fr, bg_per_frame, rng, size))
        k += n
        i += 1
    return crops, bg, i


def make_classification_set(cfg: SceneConfig, spc: int, seed: int, val_per_class: int = 20,
                            test_per_class: int = 50, size: int = 96) -> dict[str, PatchSet]:
    """Train/val/test patch sets; classes ``0..n_classes-1`` plus background."""
    if spc < 1:
        raise ValueError("samples per class must be >= 1")
    need = spc + val_per_class + test_per_class
    crops, bg, frames = _object_pool(cfg, need, seed, bg_per_frame=2)
    rng = np.random.default_rng([seed, 1])
    extra = frames
    while len(bg) < need:
        fr = generate_scene(cfg, frame_rng(seed, extra))
        bg.extend(background_crops(fr, 2, rng))
        extra += 1
    crops[BACKGROUND] = bg[:need]
    out = {k: ([], []) for k in ("train", "val", "test")}
    for c in sorted(crops):
        items = crops[c][:need]
        for name, a, b in (("train", 0, spc), ("val", spc, spc + val_per_class), ("test", spc + val_per_class, need)):
            out[name][0].extend(items[a:b])
            out[name][1].extend([c] * (b - a))
    sets = {}
    for k, (xs, ys) in out.items():
        x = np.stack(xs)[:, None].astype(np.float32) if xs else np.zeros((0, 1, 96, 96), np.float32)
        sets[k] = PatchSet(resize_patches(x, size), np.array(ys, dtype=int))
    return sets


@dataclass
class PairSet:
    x: np.ndarray     # (N, 2, 96, 96)
    y: np.ndarray     # (N,) 1 = match
    kind: np.ndarray  # (N,) 0 positive obj-obj, 1 negative obj-obj, 2 negative obj-bg

    def __len__(self):
        return len(self.y)


PAIR_KINDS = ("pos_obj_obj", "neg_obj_obj", "neg_obj_bg")


def _pairs_for(instances, bg, rng, n_pos=10, n_neg=5, n_bg=5):
    """instances: list of (class, crop)."""
    labels = np.array([c for c, _ in instances])
    xs, ys, ks = [], [], []
    for i, (c, a) in enumerate(instances):
        same = np.flatnonzero((labels == c) & (np.arange(len(labels)) != i))
        diff = np.flatnonzero(labels != c)
        if len(same) == 0:
            raise ValueError(f"class {c} has a single instance; no positive pairs possible")
        for j in rng.choice(same, n_pos, replace=len(same) < n_pos):
            xs.append((a, instances[j][1])); ys.append(1); ks.append(0)
        if len(diff):
            for j in rng.choice(diff, n_neg, replace=len(diff) < n_neg):
                xs.append((a, instances[j][1])); ys.append(0); ks.append(1)
        for j in rng.choice(len(bg), n_bg, replace=len(bg) < n_bg):
            xs.append((a, bg[j])); ys.append(0); ks.append(2)
    perm = rng.permutation(len(xs))
    x = np.stack([np.stack(xs[p]) for p in perm]).astype(np.float32)
    return PairSet(x, np.array(ys)[perm], np.array(ks)[perm])


def make_matching_set(cfg: SceneConfig, objects_per_class: int, seed: int,
                      mode: str = "shared", split=(0.7, 0.15, 0.15)) -> dict[str, PairSet]:
    """Patch pairs: per object 10 same-class, 5 other-class, 5 background.

    ``shared`` (Dataset S) splits object instances; ``disjoint`` (Dataset D)
    splits classes so no class is shared between train and test."""
    if cfg.n_classes < 2:
        raise ValueError("matching needs at least two classes")
    crops, bg, _ = _object_pool(cfg, objects_per_class, seed, bg_per_frame=2)
    rng = np.random.default_rng([seed, 2])
    names = ("train", "val", "test")
    groups = {k: [] for k in names}
    if mode == "shared":
        for c, items in crops.items():
            idx = rng.permutation(len(items))
            n_tr = int(round(split[0] * len(items)))
            n_va = int(round(split[1] * len(items)))
            for name, sl in zip(names, (idx[:n_tr], idx[n_tr:n_tr + n_va], idx[n_tr + n_va:])):
                groups[name].extend((c, items[i]) for i in sl)
    elif mode == "disjoint":
        cls = rng.permutation(sorted(crops))
        n_tr = max(2, int(round(split[0] * len(cls))))
        n_va = max(0, int(round(split[1] * len(cls))))
        parts = (cls[:n_tr], cls[n_tr:n_tr + n_va], cls[n_tr + n_va:])
        for name, part in zip(names, parts):
            for c in part:
                groups[name].extend((int(c), p) for p in crops[int(c)])
    else:
        raise ValueError(f"unknown split mode {mode!r}")
    bg_idx = rng.permutation(len(bg))
    thirds = np.array_split(bg_idx, 3)
    out = {}
    for name, part in zip(names, thirds):
        if not groups[name]:
            continue
        out[name] = _pairs_for(groups[name], [bg[i] for i in part], rng)
    return out


def _sample_windows(frames, rng, eps, windows_per_frame, positive_share, window, stride):
    """Per frame, draw windows with objectness > 0 up to ``positive_share`` of
    the budget and fill the rest with empty ones.  Yields (crop, objectness, class)."""
    for fr in frames:
        wins = sliding_windows(fr.image.shape, fr.mask, window, stride)
        if not wins:
            continue
        if fr.boxes:
            ov = iou_matrix(wins, fr.boxes)
            best = ov.argmax(axis=1)
            lab = objectness_label(ov.max(axis=1), eps)
        else:
            best = np.zeros(len(wins), dtype=int)
            lab = np.zeros(len(wins))
        pos, neg = np.flatnonzero(lab > 0), np.flatnonzero(lab == 0)
        n_pos = min(len(pos), int(round(windows_per_frame * positive_share)))
        pick = list(rng.choice(pos, n_pos, replace=False)) if n_pos else []
        n_neg = min(len(neg), windows_per_frame - n_pos)
        pick += list(rng.choice(neg, n_neg, replace=False)) if n_neg else []
        for k in pick:
            b = wins[k]
            cls = fr.boxes[best[k]].label if lab[k] > 0 else BACKGROUND
            yield fr.image[b.y:b.y + window, b.x:b.x + window], float(lab[k]), cls


def _flips(x):
    return np.ascontiguousarray(np.concatenate([x, x[..., ::-1], x[..., ::-1, :]]))


def make_objectness_set(frames: list[SonarFrame], seed: int, eps: float = 0.2,
                        windows_per_frame: int = 24, positive_share: float = 0.5,
                        window: int = 96, stride: int = 8, augment: bool = True) -> PatchSet:
    """Window crops labelled by squashed max IoU; LR and UD flips triple the set.

    Windows overlapping an object are over-sampled to ``positive_share`` of
    each frame's draw; ``y`` holds float objectness targets."""
    rng = np.random.default_rng([seed, 3])
    rows = list(_sample_windows(frames, rng, eps, windows_per_frame, positive_share, window, stride))
    if not rows:
        return PatchSet(np.zeros((0, 1, window, window), np.float32), np.zeros(0, np.float32))
    x = np.stack([r[0] for r in rows])[:, None].astype(np.float32)
    y = np.array([r[1] for r in rows], dtype=np.float32)
    if augment:
        x, y = _flips(x), np.tile(y, 3)
    return PatchSet(np.ascontiguousarray(x), y)


@dataclass
class DetectionSet:
    x: np.ndarray      # (N, 1, s, s) float32
    y_obj: np.ndarray  # (N,) objectness targets
    y_cls: np.ndarray  # (N,) class of the best-overlapping object, BACKGROUND if none


def make_detection_set(frames: list[SonarFrame], seed: int, eps: float = 0.2,
                       windows_per_frame: int = 24, positive_share: float = 0.5,
                       window: int = 96, stride: int = 8, augment: bool = True) -> DetectionSet:
    """Like :func:`make_objectness_set` but each window also carries the class
    of the object it overlaps most, or background when its objectness is 0."""
    rng = np.random.default_rng([seed, 4])
    rows = list(_sample_windows(frames, rng, eps, windows_per_frame, positive_share, window, stride))
    if not rows:
        raise DatasetError("no windows to sample")
    x = np.stack([r[0] for r in rows])[:, None].astype(np.float32)
    y_obj = np.array([r[1] for r in rows], dtype=np.float32)
    y_cls = np.array([r[2] for r in rows], dtype=int)
    if augment:
        x, y_obj, y_cls = _flips(x), np.tile(y_obj, 3), np.tile(y_cls, 3)
    return DetectionSet(x, y_obj, y_cls)


def object_templates(cfg: SceneConfig, per_class: int, seed: int, size: int = 96) -> tuple[np.ndarray, np.ndarray]:
    """Object-centred crops, ``per_class`` of each class, for template matching."""
    crops, _, _ = _object_pool(cfg, per_class, seed, size, bg_per_frame=0)
    patches = [p for c in sorted(crops) for p in crops[c][:per_class]]
    labels = [c for c in sorted(crops) for _ in crops[c][:per_class]]
    return np.stack(patches).astype(np.float32), np.array(labels)


# ------------------------------------------------------------- IO
def save_dataset(frames: list[SonarFrame], directory, cfg: SceneConfig | None = None) -> None:
    d = Path(directory)
    (d / "images").mkdir(parents=True, exist_ok=True)
    (d / "masks").mkdir(parents=True, exist_ok=True)
    lines = []
    for fr in frames:
        img_rel, mask_rel = f"images/{fr.id}.png", f"masks/{fr.id}.png"
        Image.fromarray(np.round(fr.image * 255).astype(np.uint8), mode="L").save(d / img_rel)
        Image.fromarray(fr.mask.astype(bool)).save(d / mask_rel)
        rec = {"id": fr.id, "image": img_rel, "mask": mask_rel,
               "boxes": [{"x": b.x, "y": b.y, "w": b.w, "h": b.h, "label": b.label} for b in fr.boxes]}
        lines.append(json.dumps(rec, sort_keys=True))
    (d / "annotations.jsonl").write_text("\n".join(lines) + ("\n" if lines else ""))
    if cfg is not None:
        (d / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def load_dataset(directory) -> tuple[list[SonarFrame], SceneConfig | None]:
    d = Path(directory)
    ann = d / "annotations.jsonl"
    if not ann.is_file():
        raise DatasetError(f"missing {ann}")
    frames = []
    for lineno, line in enumerate(ann.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            boxes = [BoundingBox(int(b["x"]), int(b["y"]), int(b["w"]), int(b["h"]),
                                 label=None if b.get("label") is None else int(b["label"]))
                     for b in rec["boxes"]]
            img_path, mask_path, fid = d / rec["image"], d / rec["mask"], rec["id"]
        except (ValueError, KeyError, TypeError) as exc:
            raise DatasetError(f"{ann}: line {lineno}: malformed record ({exc})") from None
        for p in (img_path, mask_path):
            if not p.is_file():
                raise DatasetError(f"{ann}: line {lineno}: missing file {p}")
        img = np.asarray(Image.open(img_path).convert("L"), dtype=np.float32) / 255.0
        mask = np.asarray(Image.open(mask_path).convert("1"), dtype=bool)
        frames.append(SonarFrame(img, mask, boxes, fid))
    cfg_path = d / "config.json"
    cfg = SceneConfig.from_dict(json.loads(cfg_path.read_text())) if cfg_path.is_file() else None
    return frames, cfg
