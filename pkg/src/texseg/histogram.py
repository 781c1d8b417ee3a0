"""Coarse candidate screening by HSV colour histogram and corner count."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, OutOfBounds
from .klt import TrackerParams, corner_maps, count_corners
from .raster import Rect, hsv_planes

H_BINS, S_BINS, V_BINS = 8, 4, 4
N_BINS = H_BINS * S_BINS * V_BINS
GRAY_SATURATION = 0.05

DEFAULT_HIST_THRESHOLD = 0.8
DEFAULT_CORNER_GAP = 0.6


@dataclass(frozen=True)
class HsvHistogram:
    bins: np.ndarray

    def __len__(self):
        return len(self.bins)


@dataclass(frozen=True)
class ScreenReport:
    candidate: Rect
    hist_distance: float
    corner_count: int
    passed: bool


def bin_index_map(img: np.ndarray) -> np.ndarray:
    """Histogram bin of every pixel of an RGB image."""
    h, s, v = hsv_planes(img)
    hb = np.minimum((h / (360.0 / H_BINS)).astype(np.intp), H_BINS - 1)
    hb[s < GRAY_SATURATION] = 0
    sb = np.minimum((s * S_BINS).astype(np.intp), S_BINS - 1)
    vb = np.minimum((v * V_BINS).astype(np.intp), V_BINS - 1)
    return (hb * S_BINS + sb) * V_BINS + vb


def block_histograms(bins: np.ndarray, rects: list[Rect]) -> np.ndarray:
    """Normalised histograms (n, N_BINS) of equal-sized blocks of a bin map."""
    if not rects:
        return np.zeros((0, N_BINS))
    height, width = bins.shape
    w, h = rects[0].w, rects[0].h
    for r in rects:
        if r.w < 1 or r.h < 1 or not r.inside(width, height):
            raise OutOfBounds(f"{r} outside {width}x{height} image")
        if (r.w, r.h) != (w, h):
            raise DimensionMismatch("block_histograms needs equal-sized rects")
    xs = np.array([r.x for r in rects])
    ys = np.array([r.y for r in rects])
    oy, ox = np.mgrid[0:h, 0:w]
    idx = bins[ys[:, None] + oy.ravel()[None, :], xs[:, None] + ox.ravel()[None, :]]
    flat = idx + np.arange(len(rects))[:, None] * N_BINS
    counts = np.bincount(flat.ravel(), minlength=len(rects) * N_BINS).reshape(len(rects), N_BINS)
    return counts / float(w * h)


def hsv_histogram(img: np.ndarray, r: Rect) -> HsvHistogram:
    height, width = img.shape[:2]
    if r.w < 1 or r.h < 1 or not r.inside(width, height):
        raise OutOfBounds(f"{r} outside {width}x{height} image")
    return HsvHistogram(block_histograms(bin_index_map(img[r.slices()]), [Rect(0, 0, r.w, r.h)])[0])


def histogram_distance(a, b) -> float:
    a = a.bins if isinstance(a, HsvHistogram) else np.asarray(a, dtype=np.float64)
    b = b.bins if isinstance(b, HsvHistogram) else np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"histogram sizes {a.shape} vs {b.shape}")
    return float(np.abs(a - b).sum())


def min_template_distance(img: np.ndarray, templates: list[Rect], candidates: list[Rect],
                          bins: np.ndarray | None = None) -> np.ndarray:
    """Smallest L1 histogram distance from each candidate to any template."""
    if bins is None:
        bins = bin_index_map(img)
    th = np.concatenate([block_histograms(bins, [t]) for t in templates]) if templates else np.zeros((0, N_BINS))
    if not candidates:
        return np.zeros(0)
    if not templates:
        return np.full(len(candidates), 2.0)
    ch = block_histograms(bins, candidates)
    best = np.full(len(candidates), np.inf)
    for t in th:
        best = np.minimum(best, np.abs(ch - t[None, :]).sum(axis=1))
    return best


def screen_by_histogram(img: np.ndarray, templates: list[Rect], candidates: list[Rect],
                        threshold: float = DEFAULT_HIST_THRESHOLD) -> list[ScreenReport]:
    dist = min_template_distance(img, templates, candidates)
    return [ScreenReport(c, float(d), 0, bool(d <= threshold)) for c, d in zip(candidates, dist)]


def corner_gap_ok(cand_counts: np.ndarray, tmpl_counts: np.ndarray, max_ratio_gap: float) -> np.ndarray:
    cand = np.asarray(cand_counts, dtype=np.float64)[:, None]
    tmpl = np.asarray(tmpl_counts, dtype=np.float64)[None, :]
    return (np.abs(cand - tmpl) <= max_ratio_gap * np.maximum(tmpl, 1.0)).any(axis=1)


def screen_by_corner_count(gray: np.ndarray, templates: list[Rect], candidates: list[Rect],
                           max_ratio_gap: float = DEFAULT_CORNER_GAP,
                           params: TrackerParams = TrackerParams()) -> list[ScreenReport]:
    """Keep candidates whose corner count is close to some template's.

    ``|n_c - n_t| <= max_ratio_gap * max(n_t, 1)`` must hold for at least one
    template count ``n_t``.
    """
    if not candidates:
        return []
    score, is_max = corner_maps(gray)
    tc = _counts(score, is_max, templates, params)
    cc = _counts(score, is_max, candidates, params)
    ok = corner_gap_ok(cc, tc, max_ratio_gap) if len(tc) else np.zeros(len(cc), dtype=bool)
    return [ScreenReport(c, 0.0, int(n), bool(p)) for c, n, p in zip(candidates, cc, ok)]


def _counts(score, is_max, rects, params):
    out = np.zeros(len(rects), dtype=np.int64)
    by_size = {}
    for i, r in enumerate(rects):
        by_size.setdefault((r.w, r.h), []).append(i)
    for (w, h), idx in by_size.items():
        if w != h:
            raise DimensionMismatch("corner screening needs square blocks")
        origins = np.array([[rects[i].x, rects[i].y] for i in idx])
        out[idx] = count_corners(score, is_max, origins, w, params)
    return out
