"""Shi-Tomasi corners, image pyramids and a pyramidal Lucas-Kanade tracker.

The match test between two equal-sized blocks tracks the template's corners
into the candidate and accepts when fewer than 15% of them are lost.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import kernels
from .errors import OutOfBounds, PointOutOfBounds, RegionTooSmall, SizeMismatch, TooManyLevels
from .raster import Rect, gaussian_blur, sobel

UNMATCHED_THRESHOLD = 0.15


@dataclass(frozen=True)
class TrackerParams:
    window: int = 7
    levels: int = 2
    max_iter: int = 20
    eps: float = 0.03
    quality: float = 0.05
    min_distance: float = 2.0
    max_corners: int = 10
    # absolute floor on the min-eigenvalue response (Sobel units, 3x3 sums);
    # keeps sensor noise on flat areas from producing corners
    min_score: float = 5000.0
    residual_threshold: float = 12.0
    min_corners: int = 3
    bounds_margin: int = 2
    unmatched_threshold: float = UNMATCHED_THRESHOLD

    @property
    def radius(self) -> int:
        return self.window // 2


@dataclass(frozen=True)
class CornerPoint:
    x: float
    y: float
    score: float


@dataclass(frozen=True)
class TrackResult:
    origin: CornerPoint
    displaced: tuple[float, float] | None
    converged: bool
    residual: float


@dataclass(frozen=True)
class MatchVerdict:
    tracked: int
    unmatched: int
    proportion_unmatched: float
    matched: bool


# ------------------------------------------------------------------ corners


def min_eigen_map(f: np.ndarray) -> np.ndarray:
    """Smaller eigenvalue of the Sobel structure tensor summed over 3x3."""
    gx, gy = sobel(f)
    box = np.ones(3)

    def win(a):
        a = ndimage.convolve1d(a, box, axis=0, mode="nearest")
        return ndimage.convolve1d(a, box, axis=1, mode="nearest")

    sxx, syy, sxy = win(gx * gx), win(gy * gy), win(gx * gy)
    tr = sxx + syy
    disc = np.sqrt(np.maximum((sxx - syy) ** 2 + 4.0 * sxy * sxy, 0.0))
    return np.maximum(0.5 * (tr - disc), 0.0)


def local_max_map(score: np.ndarray) -> np.ndarray:
    return score >= ndimage.maximum_filter(score, size=3, mode="nearest")


def shi_tomasi_corners(f: np.ndarray, region: Rect, max_corners: int = 10, quality: float = 0.05,
                       min_distance: float = 2.0, min_score: float = 0.0) -> list[CornerPoint]:
    """Min-eigenvalue corners inside ``region``, strongest first.

    Gradients and the local-maximum test use the pixels around the region, so
    a window cut from a larger image sees its true context.
    """
    height, width = f.shape
    if region.w < 3 or region.h < 3:
        raise RegionTooSmall(f"corner region must be at least 3x3, got {region.w}x{region.h}")
    if not region.inside(width, height):
        raise RegionTooSmall(f"{region} outside {width}x{height} field")
    ctx = region.inflate(3).clip(width, height)
    score = min_eigen_map(f[ctx.slices()])
    is_max = local_max_map(score)
    x0, y0 = region.x - ctx.x, region.y - ctx.y
    pts = kernels.pick_corners(score, is_max, x0, y0, x0 + region.w, y0 + region.h,
                               int(max_corners), float(quality), float(min_score), float(min_distance))
    return [CornerPoint(float(x + ctx.x), float(y + ctx.y), float(s)) for x, y, s in pts]


def corner_maps(f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    score = min_eigen_map(f)
    return score, local_max_map(score)


def count_corners(score: np.ndarray, is_max: np.ndarray, origins: np.ndarray, s: int,
                  params: TrackerParams) -> np.ndarray:
    """Corner count for each ``s x s`` block with top-left corner in ``origins``.

    Counts come from whole-image score maps, which matches
    :func:`shi_tomasi_corners` away from the image border.
    """
    origins = np.ascontiguousarray(origins, dtype=np.int64).reshape(-1, 2)
    return kernels.count_corners_batch(score, is_max, origins, int(s), int(params.max_corners),
                                       float(params.quality), float(params.min_score),
                                       float(params.min_distance))


# ------------------------------------------------------------------ pyramid


def build_pyramid(f: np.ndarray, levels: int) -> list[np.ndarray]:
    if levels < 1:
        raise TooManyLevels(f"levels must be >= 1, got {levels}")
    f = np.ascontiguousarray(f, dtype=np.float64)
    h, w = f.shape
    if levels > 1 and min(h, w) >> (levels - 1) < 8:
        raise TooManyLevels(f"{w}x{h} field cannot hold {levels} levels with an 8x8 top")
    pyr = [f]
    for _ in range(levels - 1):
        prev = pyr[-1]
        h, w = prev.shape
        pyr.append(np.ascontiguousarray(gaussian_blur(prev, 1.0)[:2 * (h // 2):2, :2 * (w // 2):2]))
    return pyr


def max_levels(h: int, w: int, wanted: int) -> int:
    levels = max(int(wanted), 1)
    while levels > 1 and min(h, w) >> (levels - 1) < 8:
        levels -= 1
    return levels


def _central_gradients(f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = np.pad(f, 1, mode="edge")
    return 0.5 * (p[1:-1, 2:] - p[1:-1, :-2]), 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])


@dataclass
class FeatureSet:
    """Tracking data for corners prepared on a source pyramid."""

    pts: np.ndarray   # (n, 2) level-0 source coordinates
    T: np.ndarray     # (n, L, win*win)
    GX: np.ndarray
    GY: np.ndarray
    GINV: np.ndarray  # (n, L, 3) inverse gradient matrix (a, b, c) = [[a, b], [b, c]]
    OK: np.ndarray    # (n, L) non-degenerate


def prepare_features(src: list[np.ndarray], pts: np.ndarray, radius: int,
                     min_det: float = 1e-6) -> FeatureSet:
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    levels = len(src)
    nwin = (2 * radius + 1) ** 2
    T = np.zeros((n, levels, nwin))
    GX = np.zeros_like(T)
    GY = np.zeros_like(T)
    GINV = np.zeros((n, levels, 3))
    OK = np.zeros((n, levels), dtype=bool)
    offy, offx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    offx = offx.ravel().astype(np.float64)
    offy = offy.ravel().astype(np.float64)
    for lev, img in enumerate(src):
        if n == 0:
            break
        gx, gy = _central_gradients(img)
        scale = 1.0 / (1 << lev)
        sx = pts[:, 0:1] * scale + offx[None, :]
        sy = pts[:, 1:2] * scale + offy[None, :]
        T[:, lev] = kernels._bilinear_np(img, sx, sy)
        GX[:, lev] = kernels._bilinear_np(gx, sx, sy)
        GY[:, lev] = kernels._bilinear_np(gy, sx, sy)
        gxx = (GX[:, lev] ** 2).sum(axis=1)
        gyy = (GY[:, lev] ** 2).sum(axis=1)
        gxy = (GX[:, lev] * GY[:, lev]).sum(axis=1)
        det = gxx * gyy - gxy * gxy
        ok = det >= min_det
        safe = np.where(ok, det, 1.0)
        GINV[:, lev, 0] = np.where(ok, gyy / safe, 0.0)
        GINV[:, lev, 1] = np.where(ok, -gxy / safe, 0.0)
        GINV[:, lev, 2] = np.where(ok, gxx / safe, 0.0)
        OK[:, lev] = ok
    return FeatureSet(pts, T, GX, GY, GINV, OK)


def _as_pyramid(f, levels: int) -> list[np.ndarray]:
    if isinstance(f, (list, tuple)):
        return list(f)
    return build_pyramid(f, levels)


def klt_track(src, dst, p: CornerPoint, window: int = 7, max_iter: int = 20, eps: float = 0.03,
              residual_threshold: float = 12.0, levels: int = 2) -> TrackResult:
    """Track one point from ``src`` into ``dst`` (pyramids or fields).

    A track converges when the iterations settle (or run out) at every level,
    the final point stays in the image, and the window residual (mean
    absolute difference) is at most ``residual_threshold``.
    """
    src = _as_pyramid(src, levels)
    dst = _as_pyramid(dst, levels)
    if len(src) != len(dst):
        raise SizeMismatch("source and destination pyramids differ in depth")
    radius = window // 2
    h, w = src[0].shape
    if not (radius <= p.x <= w - 1 - radius and radius <= p.y <= h - 1 - radius):
        raise PointOutOfBounds(f"({p.x}, {p.y}) too close to the border for window {window}")
    fs = prepare_features(src, [[p.x, p.y]], radius)
    pos, status, resid = kernels.track_points(tuple(dst), fs.T, fs.GX, fs.GY, fs.GINV, fs.OK,
                                              np.array([[p.x, p.y]]), radius, int(max_iter), float(eps))
    ok = bool(status[0] == kernels.TRACK_OK and resid[0] <= residual_threshold)
    return TrackResult(p, (float(pos[0, 0]), float(pos[0, 1])) if ok else None, ok,
                       float(resid[0]) if np.isfinite(resid[0]) else float("inf"))


def verdict(tracked: int, unmatched: int, params: TrackerParams = TrackerParams()) -> MatchVerdict:
    total = tracked + unmatched
    prop = unmatched / max(total, 1)
    return MatchVerdict(tracked, unmatched, prop,
                        bool(prop < params.unmatched_threshold and total >= params.min_corners))


def match_blocks(src_img, template: Rect, dst_img, candidate: Rect,
                 params: TrackerParams = TrackerParams()) -> MatchVerdict:
    """Decide whether ``candidate`` in ``dst_img`` matches ``template`` in ``src_img``.

    Either image may be passed as a prebuilt pyramid. Corners found in the
    template are tracked into the candidate starting from the same offset
    within the block. ``tracked`` counts corners that were found again.
    """
    if (template.w, template.h) != (candidate.w, candidate.h):
        raise SizeMismatch(f"template {template.w}x{template.h} vs candidate {candidate.w}x{candidate.h}")
    src = _as_pyramid(src_img, params.levels)
    dst = _as_pyramid(dst_img, params.levels)
    if len(src) != len(dst):
        raise SizeMismatch("source and destination pyramids differ in depth")
    if not candidate.inside(dst[0].shape[1], dst[0].shape[0]):
        raise OutOfBounds(f"candidate {candidate} outside destination")
    corners = shi_tomasi_corners(src[0], template, params.max_corners, params.quality,
                                 params.min_distance, params.min_score)
    if len(corners) < params.min_corners:
        return MatchVerdict(0, 0, 0.0, False)
    pts = np.array([[c.x, c.y] for c in corners])
    fs = prepare_features(src, pts, params.radius)
    guess = pts - [template.x, template.y] + [candidate.x, candidate.y]
    pos, status, resid = kernels.track_points(tuple(dst), fs.T, fs.GX, fs.GY, fs.GINV, fs.OK,
                                              guess, params.radius, params.max_iter, params.eps)
    m = params.bounds_margin
    inside = ((pos[:, 0] >= candidate.x - m) & (pos[:, 0] <= candidate.x2 - 1 + m)
              & (pos[:, 1] >= candidate.y - m) & (pos[:, 1] <= candidate.y2 - 1 + m))
    good = (status == kernels.TRACK_OK) & (resid <= params.residual_threshold) & inside
    return verdict(int(good.sum()), int((~good).sum()), params)
