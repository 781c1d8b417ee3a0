"""Texture search over the candidate lattice.

Pipeline: enumerate lattice cells, screen them by colour histogram and
corner count, then run three match rounds over the transform bank
(mirrors, rotations x scales, perspective bends), each followed by a
neighbour fill pass.

Within a round the search walks (template, transform) pairs in order and
tests each pair against every still-pending cell. Because a cell's verdict
for a pair does not depend on any other cell, each cell still receives its
first match in template-then-transform order, and the cells can be split
into row bands processed on worker threads with disjoint writes.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import ndimage

from . import kernels
from .errors import ImageTooSmall, InvalidRegion, SizeMismatch
from .histogram import bin_index_map, block_histograms, corner_gap_ok
from .klt import TrackerParams, build_pyramid, corner_maps, count_corners, max_levels, prepare_features, shi_tomasi_corners
from .raster import Rect, to_gray
from .warp import (DEFAULT_BENDS, TransformSpec, generate_transform_bank, homography_from_spec,
                   recenter, split_bank, warp_block)

UNVISITED = 0
SCREENED_OUT = 1
LABELED = 2
REJECTED = 3
DEFAULT_LABELED = 4

STATE_NAMES = {UNVISITED: "unvisited", SCREENED_OUT: "screened_out", LABELED: "labeled",
               REJECTED: "rejected", DEFAULT_LABELED: "default_labeled"}


@dataclass
class LabelGrid:
    grid_w: int
    grid_h: int
    stride: int
    block_size: int
    image_w: int
    image_h: int
    state: np.ndarray = None
    round: np.ndarray = None
    template: np.ndarray = None
    transform: np.ndarray = None
    # match attempts per round (index 0..3) and cell
    attempts: np.ndarray = None

    def __post_init__(self):
        shape = (self.grid_h, self.grid_w)
        if self.state is None:
            self.state = np.zeros(shape, dtype=np.int8)
        if self.round is None:
            self.round = np.full(shape, -1, dtype=np.int8)
        if self.template is None:
            self.template = np.full(shape, -1, dtype=np.int32)
        if self.transform is None:
            self.transform = np.full(shape, -1, dtype=np.int32)
        if self.attempts is None:
            self.attempts = np.zeros((4,) + shape, dtype=np.int64)

    def copy(self) -> "LabelGrid":
        return replace(self, state=self.state.copy(), round=self.round.copy(),
                       template=self.template.copy(), transform=self.transform.copy(),
                       attempts=self.attempts.copy())

    def rect(self, gx: int, gy: int) -> Rect:
        return Rect(gx * self.stride, gy * self.stride, self.block_size, self.block_size)

    def origins(self) -> np.ndarray:
        """(grid_h, grid_w, 2) pixel origins (x, y) of every cell."""
        gy, gx = np.mgrid[0:self.grid_h, 0:self.grid_w]
        return np.stack([gx * self.stride, gy * self.stride], axis=-1)

    def labeled_mask(self) -> np.ndarray:
        return (self.state == LABELED) | (self.state == DEFAULT_LABELED)

    def label(self, gy, gx, round_id, template, transform):
        self.state[gy, gx] = LABELED
        self.round[gy, gx] = round_id
        self.template[gy, gx] = template
        self.transform[gy, gx] = transform

    def same_labels(self, other: "LabelGrid") -> bool:
        return (self.grid_w == other.grid_w and self.grid_h == other.grid_h
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("state", "round", "template", "transform")))

    def counts(self) -> dict[str, int]:
        lab = self.state == LABELED
        return {
            "round0": int((lab & (self.round == 0)).sum()),
            "round1": int((lab & (self.round == 1)).sum()),
            "round2": int((lab & (self.round == 2)).sum()),
            "round3": int((lab & (self.round == 3)).sum()),
            "default": int((self.state == DEFAULT_LABELED).sum()),
            "labeled": int(self.labeled_mask().sum()),
        }


@dataclass(frozen=True)
class SeedSpec:
    region: Rect
    block_size: int = 12
    templates: tuple[Rect, ...] = ()

    @classmethod
    def from_region(cls, region: Rect, block_size: int = 12, max_templates: int | None = None) -> "SeedSpec":
        """Tile ``region`` row-major with ``block_size`` templates."""
        s = block_size
        nx, ny = region.w // s, region.h // s
        tiles = [Rect(region.x + i * s, region.y + j * s, s, s) for j in range(ny) for i in range(nx)]
        if max_templates is not None:
            tiles = tiles[:max_templates]
        if not tiles:
            raise InvalidRegion(f"seed {region} holds no {s}x{s} template")
        return cls(region, s, tuple(tiles))


@dataclass(frozen=True)
class DetectorConfig:
    stride: int = 3
    block_size: int = 12
    unmatched_threshold: float = 0.15
    hist_threshold: float = 0.8
    corner_gap: float = 0.6
    rotation_step: float = 5.0
    scale_min: float = 0.8
    scale_max: float = 1.3
    scale_step: float = 0.1
    bend_strengths: tuple[float, ...] = DEFAULT_BENDS
    coarse_rotation_step: float = 45.0
    neighbor_fill_min: int = 6
    thread_count: int = 1
    tracker: TrackerParams = field(default_factory=TrackerParams)
    band_rows: int = 4
    chunk_pairs: int = 48

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if not 0.0 < self.unmatched_threshold < 1.0:
            raise ValueError("unmatched threshold must lie in (0, 1)")
        for name in ("hist_threshold", "corner_gap", "scale_min", "scale_max", "scale_step"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.scale_min > self.scale_max:
            raise ValueError("empty scale range")
        if self.thread_count < 1:
            raise ValueError("thread_count must be >= 1")

    def scales(self) -> list[float]:
        n = int(math.floor((self.scale_max - self.scale_min) / self.scale_step + 1e-9)) + 1
        return [round(self.scale_min + k * self.scale_step, 6) for k in range(n)]

    def bank(self) -> list[TransformSpec]:
        return generate_transform_bank(self.rotation_step, self.scales(), self.bend_strengths,
                                       self.coarse_rotation_step)

    def tracker_params(self) -> TrackerParams:
        return replace(self.tracker, unmatched_threshold=self.unmatched_threshold)


def ssd_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Sum over pixels and channels of squared differences."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise SizeMismatch(f"blocks {a.shape} vs {b.shape}")
    return float(((a - b) ** 2).sum())


def enumerate_candidates(img: np.ndarray, s: int, stride: int) -> LabelGrid:
    height, width = img.shape[:2]
    if width < s or height < s:
        raise ImageTooSmall(f"{width}x{height} image is smaller than block {s}")
    return LabelGrid((width - s) // stride + 1, (height - s) // stride + 1, stride, s, width, height)


# ------------------------------------------------------------ search context


class SearchContext:
    """Per-image data shared by screening and all rounds."""

    def __init__(self, img: np.ndarray, seed: SeedSpec, cfg: DetectorConfig):
        if seed.block_size != cfg.block_size:
            raise SizeMismatch(f"seed block {seed.block_size} vs config block {cfg.block_size}")
        height, width = img.shape[:2]
        if not seed.region.inside(width, height):
            raise InvalidRegion(f"seed {seed.region} outside {width}x{height} image")
        self.img = img
        self.seed = seed
        self.cfg = cfg
        self.params = cfg.tracker_params()
        self.bank = cfg.bank()
        self.gray = np.ascontiguousarray(to_gray(img))
        s = cfg.block_size
        levels = self.params.levels
        # template patches carry one block of context on every side so the
        # coarse pyramid levels stay >= 8 px
        self.pad = max(s, int(math.ceil((8 * (1 << max(levels - 1, 0)) - s) / 2)))
        self.levels = min(levels, max_levels(height, width, levels), max_levels(s + 2 * self.pad, s + 2 * self.pad, levels))
        self.pyramid = tuple(build_pyramid(self.gray, self.levels))
        self.padded_gray = np.pad(self.gray, self.pad, mode="edge")
        self._padded_rgb = None

    @property
    def padded_rgb(self):
        if self._padded_rgb is None:
            p = self.pad
            self._padded_rgb = np.pad(self.img, ((p, p), (p, p), (0, 0)), mode="edge")
        return self._padded_rgb

    def patch_homography(self, transform: int) -> np.ndarray:
        s = self.cfg.block_size
        h = homography_from_spec(self.bank[transform], s)
        return recenter(h, self.pad, self.pad)

    def patch_rect(self, template: int) -> Rect:
        t = self.seed.templates[template]
        return Rect(t.x, t.y, t.w + 2 * self.pad, t.h + 2 * self.pad)

    def warped_template(self, template: int, transform: int, rgb: bool = False) -> np.ndarray:
        """The s x s template block warped by a bank transform."""
        src = self.padded_rgb if rgb else self.padded_gray
        out = warp_block(src, self.patch_rect(template), self.patch_homography(transform))
        p, s = self.pad, self.cfg.block_size
        return out[p:p + s, p:p + s]

    def features(self, template: int, transform: int):
        """Corners of a warped template (block-local) and their tracking data."""
        p, s = self.pad, self.cfg.block_size
        patch = warp_block(self.padded_gray, self.patch_rect(template), self.patch_homography(transform))
        pyr = build_pyramid(patch, self.levels)
        prm = self.params
        corners = shi_tomasi_corners(pyr[0], Rect(p, p, s, s), prm.max_corners, prm.quality,
                                     prm.min_distance, prm.min_score)
        pts = np.array([[c.x, c.y] for c in corners]).reshape(-1, 2)
        fs = prepare_features(pyr, pts, prm.radius)
        return pts - p, fs


def _stack_features(ctx: SearchContext, pairs: list[tuple[int, int]]):
    prm = ctx.params
    c_max = prm.max_corners
    nwin = prm.window * prm.window
    k = len(pairs)
    L = ctx.levels
    npts = np.zeros(k, dtype=np.int64)
    pts = np.zeros((k, c_max, 2))
    T = np.zeros((k, c_max, L, nwin))
    GX = np.zeros_like(T)
    GY = np.zeros_like(T)
    GINV = np.zeros((k, c_max, L, 3))
    OK = np.zeros((k, c_max, L), dtype=np.bool_)
    for i, (t, x) in enumerate(pairs):
        local, fs = ctx.features(t, x)
        n = len(local)
        npts[i] = n
        pts[i, :n] = local
        T[i, :n], GX[i, :n], GY[i, :n], GINV[i, :n], OK[i, :n] = fs.T, fs.GX, fs.GY, fs.GINV, fs.OK
    return npts, pts, T, GX, GY, GINV, OK


# ---------------------------------------------------------------- screening


def run_screening(img: np.ndarray, seed: SeedSpec, grid: LabelGrid, cfg: DetectorConfig,
                  ctx: SearchContext | None = None) -> LabelGrid:
    """Screen out cells whose histogram or corner count is far from every template.

    Cells covering more than half their area with the seed region are
    labelled as round 0 straight away.
    """
    ctx = ctx or SearchContext(img, seed, cfg)
    grid = grid.copy()
    s = grid.block_size
    origins = grid.origins().reshape(-1, 2)
    rects = [Rect(int(x), int(y), s, s) for x, y in origins]
    bins = bin_index_map(img)
    th = block_histograms(bins, list(seed.templates))
    ch = block_histograms(bins, rects)
    dist = np.full(len(rects), np.inf)
    for t in th:
        dist = np.minimum(dist, np.abs(ch - t[None, :]).sum(axis=1))
    score, is_max = corner_maps(ctx.gray)
    tc = count_corners(score, is_max, np.array([[t.x, t.y] for t in seed.templates]), s, ctx.params)
    cc = count_corners(score, is_max, origins, s, ctx.params)
    passed = (dist <= cfg.hist_threshold) & corner_gap_ok(cc, tc, cfg.corner_gap)
    state = grid.state.reshape(-1)
    fresh = state == UNVISITED
    state[fresh & ~passed] = SCREENED_OUT

    for i, r in enumerate(rects):
        overlap = [r.intersection_area(t) for t in seed.templates]
        if r.intersection_area(seed.region) * 2 > r.area:
            gy, gx = divmod(i, grid.grid_w)
            grid.label(gy, gx, 0, int(np.argmax(overlap)), 0)
    return grid


# --------------------------------------------------------------- the rounds


def round_slices(bank: list[TransformSpec]) -> dict[int, list[int]]:
    r1, r2, r3 = split_bank(bank)
    return {1: r1, 2: r2, 3: r3}


def run_round(img: np.ndarray, seed: SeedSpec, grid: LabelGrid, round_id: int, bank_slice: list[int],
              cfg: DetectorConfig, ctx: SearchContext | None = None,
              progress: Callable[[int, int], None] | None = None) -> LabelGrid:
    """One search round over ``bank_slice`` (indices into ``cfg.bank()``).

    Only unvisited cells are searched. A cell takes the first matching
    (template, transform) pair; unmatched cells stay unvisited, except after
    round 3 where they become rejected.
    """
    if round_id not in (1, 2, 3):
        raise ValueError(f"round must be 1, 2 or 3, got {round_id}")
    ctx = ctx or SearchContext(img, seed, cfg)
    grid = grid.copy()
    prm = ctx.params
    pending = np.flatnonzero(grid.state.reshape(-1) == UNVISITED)
    origins = np.ascontiguousarray(grid.origins().reshape(-1, 2)[pending], dtype=np.int64)
    assigned = np.full(len(pending), -1, dtype=np.int64)
    attempts = np.zeros(len(pending), dtype=np.int64)
    pairs = [(t, x) for t in range(len(seed.templates)) for x in bank_slice]

    # contiguous row bands of the pending list
    rows = pending // grid.grid_w
    cuts = np.searchsorted(rows, np.arange(0, grid.grid_h + cfg.band_rows, cfg.band_rows))
    bands = [(a, b) for a, b in zip(cuts[:-1], cuts[1:]) if b > a]

    pool = ThreadPoolExecutor(max_workers=cfg.thread_count) if cfg.thread_count > 1 else None
    try:
        for start in range(0, len(pairs), cfg.chunk_pairs):
            if not (assigned < 0).any():
                break
            chunk = pairs[start:start + cfg.chunk_pairs]
            feats = _stack_features(ctx, chunk)

            def work(band, feats=feats, start=start):
                a, b = band
                kernels.match_cells(ctx.pyramid, *feats, origins[a:b], assigned[a:b], attempts[a:b],
                                    start, grid.block_size, prm.radius, prm.max_iter, prm.eps,
                                    prm.residual_threshold, prm.unmatched_threshold,
                                    prm.min_corners, prm.bounds_margin)

            if pool is None:
                for band in bands:
                    work(band)
            else:
                list(pool.map(work, bands))
            if progress is not None:
                progress(min(start + cfg.chunk_pairs, len(pairs)), len(pairs))
    finally:
        if pool is not None:
            pool.shutdown()

    flat_attempts = grid.attempts[round_id].reshape(-1)
    flat_attempts[pending] += attempts
    hit = assigned >= 0
    cells = pending[hit]
    pair_idx = assigned[hit]
    nt = len(bank_slice)
    st = grid.state.reshape(-1)
    st[cells] = LABELED
    grid.round.reshape(-1)[cells] = round_id
    grid.template.reshape(-1)[cells] = pair_idx // max(nt, 1)
    grid.transform.reshape(-1)[cells] = np.asarray(bank_slice, dtype=np.int64)[pair_idx % max(nt, 1)] if nt else -1
    if round_id == 3:
        st[pending[~hit]] = REJECTED
    return grid


def fill_by_neighbors(grid: LabelGrid, min_labeled_neighbors: int) -> LabelGrid:
    """Label unvisited/rejected cells with enough labelled 8-neighbours.

    Computed on a snapshot, so one call never chains through cells it has
    just filled.
    """
    grid = grid.copy()
    lab = grid.labeled_mask().astype(np.int64)
    k = np.ones((3, 3), dtype=np.int64)
    k[1, 1] = 0
    n = ndimage.convolve(lab, k, mode="constant", cval=0)
    eligible = (grid.state == UNVISITED) | (grid.state == REJECTED)
    grid.state[eligible & (n >= min_labeled_neighbors)] = DEFAULT_LABELED
    return grid


def detect(img: np.ndarray, seed: SeedSpec, cfg: DetectorConfig = DetectorConfig(),
           progress: Callable[[str, int, int], None] | None = None) -> LabelGrid:
    """Full search: screen, then rounds 1-3 each followed by a fill pass."""
    ctx = SearchContext(img, seed, cfg)
    grid = enumerate_candidates(img, cfg.block_size, cfg.stride)
    grid = run_screening(img, seed, grid, cfg, ctx)
    slices = round_slices(ctx.bank)
    for r in (1, 2, 3):
        cb = None if progress is None else (lambda d, t, r=r: progress(f"round {r}", d, t))
        grid = run_round(img, seed, grid, r, slices[r], cfg, ctx, cb)
        grid = fill_by_neighbors(grid, cfg.neighbor_fill_min)
    return grid


# ---------------------------------------------------------------- label dump


def label_dump_lines(img: np.ndarray, seed: SeedSpec, grid: LabelGrid, cfg: DetectorConfig,
                     include_default: bool = True) -> list[str]:
    """``gx gy round template_idx transform_spec ssd_score`` per labelled cell.

    Default-labelled cells carry round ``D``, template ``-1``, transform
    ``default`` and score ``nan``.
    """
    ctx = SearchContext(img, seed, cfg)
    cache = {}
    lines = []
    for gy in range(grid.grid_h):
        for gx in range(grid.grid_w):
            st = grid.state[gy, gx]
            if st == LABELED:
                t, x = int(grid.template[gy, gx]), int(grid.transform[gy, gx])
                if (t, x) not in cache:
                    cache[t, x] = ctx.warped_template(t, x, rgb=True)
                r = grid.rect(gx, gy)
                score = ssd_similarity(cache[t, x], img[r.slices()])
                lines.append(f"{gx} {gy} {int(grid.round[gy, gx])} {t} {ctx.bank[x].to_text()} {score:.1f}")
            elif st == DEFAULT_LABELED and include_default:
                lines.append(f"{gx} {gy} D -1 default nan")
    return lines


def parse_label_dump(lines) -> list[dict]:
    out = []
    for line in lines:
        tok = line.split()
        if not tok:
            continue
        out.append({"gx": int(tok[0]), "gy": int(tok[1]),
                    "round": None if tok[2] == "D" else int(tok[2]),
                    "template": int(tok[3]), "transform": " ".join(tok[4:-1]),
                    "ssd": float(tok[-1])})
    return out
