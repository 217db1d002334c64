"""Template matching: CC and SQD similarities, the nearest-template
classifier and a dense CC objectness baseline."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from .geometry import ObjectnessMap

log = logging.getLogger(__name__)

_VAR_FLOOR = 1e-12


class DegenerateInputError(ValueError):
    """Raised for constant (zero-variance) patches under CC."""


def _centered(a):
    a = np.asarray(a, dtype=np.float64).ravel()
    return a - a.mean()


def cc_similarity(t, i) -> float:
    """Normalized cross-correlation (Pearson form), in [-1, 1]."""
    t, i = np.asarray(t), np.asarray(i)
    if t.shape != i.shape:
        raise ValueError(f"shape mismatch {t.shape} vs {i.shape}")
    tc, ic = _centered(t), _centered(i)
    den = np.sqrt(np.dot(tc, tc) * np.dot(ic, ic))
    if den <= _VAR_FLOOR:
        raise DegenerateInputError("zero-variance patch")
    return float(np.clip(np.dot(tc, ic) / den, -1.0, 1.0))


def sqd_similarity(t, i) -> float:
    """Mean squared difference; lower means more similar."""
    t, i = np.asarray(t, dtype=np.float64), np.asarray(i, dtype=np.float64)
    if t.shape != i.shape:
        raise ValueError(f"shape mismatch {t.shape} vs {i.shape}")
    d = i - t
    return float(np.mean(d * d))


@dataclass
class TemplateSet:
    patches: np.ndarray  # (N, H, W)
    labels: np.ndarray   # (N,)

    def __post_init__(self):
        self.patches = np.asarray(self.patches, dtype=np.float64)
        if self.patches.ndim == 4:
            self.patches = self.patches[:, 0]
        self.labels = np.asarray(self.labels, dtype=int)
        if self.patches.ndim != 3 or len(self.patches) != len(self.labels):
            raise ValueError("templates must be (N, H, W) with one label each")

    def __len__(self):
        return len(self.labels)

    @classmethod
    def sample(cls, patches, labels, per_class: int, rng: np.random.Generator) -> "TemplateSet":
        """Draw ``per_class`` templates of every class present in ``labels``."""
        labels = np.asarray(labels)
        idx = []
        for c in np.unique(labels):
            pool = np.flatnonzero(labels == c)
            if len(pool) < per_class:
                raise ValueError(f"class {c} has {len(pool)} patches, {per_class} requested")
            idx.extend(rng.choice(pool, per_class, replace=False))
        idx = np.array(idx)
        return cls(np.asarray(patches)[idx], labels[idx])


def _flat(x):
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(x.shape[0], -1)


def similarity_matrix(queries, templates: TemplateSet, metric: str = "cc") -> np.ndarray:
    """``(Q, N)`` similarities; CC entries of degenerate pairs are NaN."""
    q, t = _flat(queries), _flat(templates.patches)
    if q.shape[1] != t.shape[1]:
        raise ValueError("query and template sizes differ")
    if metric == "sqd":
        return (q * q).mean(1)[:, None] + (t * t).mean(1)[None, :] - 2 * (q @ t.T) / q.shape[1]
    if metric != "cc":
        raise ValueError(f"unknown metric {metric!r}")
    qc = q - q.mean(1, keepdims=True)
    tc = t - t.mean(1, keepdims=True)
    qn, tn = np.sqrt((qc * qc).sum(1)), np.sqrt((tc * tc).sum(1))
    with np.errstate(invalid="ignore", divide="ignore"):
        s = (qc @ tc.T) / np.outer(qn, tn)
    s[(qn <= _VAR_FLOOR)[:, None] | (tn <= _VAR_FLOOR)[None, :]] = np.nan
    return np.clip(s, -1, 1)


def tm_classify(patches, templates: TemplateSet, metric: str = "cc") -> np.ndarray:
    """1-nearest-template labels for a batch of patches ``(Q, H, W)``.

    CC picks the highest score, SQD the lowest; ties go to the lowest
    template index.  Degenerate templates are skipped."""
    if len(templates) == 0:
        raise ValueError("empty template set")
    patches = np.asarray(patches)
    single = patches.ndim == 2
    if single:
        patches = patches[None]
    s = similarity_matrix(patches, templates, metric)
    if metric == "cc":
        bad = np.isnan(s)
        if bad.all(axis=1).any():
            raise DegenerateInputError("no usable template for a query (all degenerate)")
        if bad.any():
            log.warning("skipping %d degenerate template comparisons", int(bad.sum()))
        out = templates.labels[np.argmax(np.where(bad, -np.inf, s), axis=1)]
    else:
        out = templates.labels[np.argmin(s, axis=1)]
    return out[0] if single else out


def _window_sums(frame, h, w):
    c = np.zeros((frame.shape[0] + 1, frame.shape[1] + 1))
    c[1:, 1:] = frame.cumsum(0).cumsum(1)
    return c[h:, w:] - c[:-h, w:] - c[h:, :-w] + c[:-h, :-w]


def sliding_cc(frame, templates) -> np.ndarray:
    """CC of every template against every frame position (top-left indexed),
    shape ``(N, H - h + 1, W - w + 1)``.  Zero-variance windows score 0."""
    frame = np.asarray(frame, dtype=np.float64)
    templates = np.asarray(templates, dtype=np.float64)
    if templates.ndim == 2:
        templates = templates[None]
    n, h, w = templates.shape
    H, W = frame.shape
    if H < h or W < w:
        raise ValueError(f"frame {H}x{W} smaller than template {h}x{w}")
    npx = h * w
    s1 = _window_sums(frame, h, w)
    s2 = _window_sums(frame * frame, h, w)
    win_var = np.clip(s2 - s1 * s1 / npx, 0, None)
    shape = (sfft.next_fast_len(H + h - 1), sfft.next_fast_len(W + w - 1))
    ff = sfft.rfft2(frame, shape)
    out = np.zeros((n, H - h + 1, W - w + 1))
    for k, t in enumerate(templates):
        tc = t - t.mean()
        tn = np.sqrt((tc * tc).sum())
        if tn <= _VAR_FLOOR:
            continue
        full = sfft.irfft2(ff * sfft.rfft2(tc[::-1, ::-1], shape), shape)
        num = full[h - 1:H, w - 1:W]
        den = np.sqrt(win_var) * tn
        ok = win_var > _VAR_FLOOR * npx
        out[k] = np.where(ok, num / np.where(ok, den, 1.0), 0.0)
    return np.clip(out, -1, 1)


def tm_objectness_map(frame, templates, n: int | None = 100) -> ObjectnessMap:
    """Max CC over templates at every position, negatives set to zero."""
    t = templates.patches if isinstance(templates, TemplateSet) else np.asarray(templates)
    if n is not None:
        t = t[:n]
    if len(t) == 0:
        raise ValueError("no templates")
    values = np.clip(sliding_cc(frame, t).max(axis=0), 0.0, 1.0)
    return ObjectnessMap(values, stride=1, origin=t.shape[-1] // 2)
