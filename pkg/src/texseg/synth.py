"""Synthetic scenes with known ground truth and the evaluation harness."""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .detector import DetectorConfig, SeedSpec, detect
from .errors import DimensionMismatch, InvalidRegion, OverlapError, TexsegError
from .raster import Rect
from .warp import TransformSpec, homography_from_spec, recenter

TILE = 12
TILE_KINDS = ("brick", "checker", "noise_patch")
BACKGROUNDS = ("solid", "stripes", "blobs")

BRICK_A = (172, 64, 46)
BRICK_B = (140, 52, 38)
MORTAR = (214, 208, 196)
SOLID_BG = (46, 96, 168)


@dataclass
class SyntheticScene:
    image: np.ndarray
    truth: np.ndarray
    seed_hint: Rect
    recipe: dict = field(default_factory=dict)


def base_tile(kind: str, rng_seed: int = 0) -> np.ndarray:
    """The 12x12 RGB tile a texture region repeats."""
    t = np.empty((TILE, TILE, 3), dtype=np.float64)
    if kind == "brick":
        t[:6] = BRICK_A
        t[6:] = BRICK_B
        # running bond: top course joint at x=5, bottom course at x=11
        t[5, :] = MORTAR
        t[11, :] = MORTAR
        t[:5, 5] = MORTAR
        t[6:11, 11] = MORTAR
        # weathering flecks break the tile's mirror symmetry
        t[2, 1:3] = (110, 40, 30)
        t[8, 6:9] = (196, 96, 70)
        t[3, 8] = (120, 44, 34)
    elif kind == "checker":
        t[:] = (230, 200, 60)
        t[:6, 6:] = (40, 40, 120)
        t[6:, :6] = (40, 40, 120)
    elif kind == "noise_patch":
        rng = np.random.default_rng(rng_seed)
        raw = rng.uniform(0, 255, size=(TILE, TILE, 3))
        t[:] = ndimage.gaussian_filter(raw, sigma=(0.8, 0.8, 0), mode="wrap")
        lo, hi = t.min(), t.max()
        t[:] = (t - lo) / max(hi - lo, 1e-9) * 215 + 20
    else:
        raise InvalidRegion(f"unknown tile kind {kind!r}")
    return t


def sample_periodic(tile: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Bilinear samples of the infinite periodic extension of ``tile``."""
    th, tw = tile.shape[:2]
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    ax = (sx - x0)[..., None]
    ay = (sy - y0)[..., None]
    xa, xb = x0 % tw, (x0 + 1) % tw
    ya, yb = y0 % th, (y0 + 1) % th
    top = tile[ya, xa] * (1 - ax) + tile[ya, xb] * ax
    bot = tile[yb, xa] * (1 - ax) + tile[yb, xb] * ax
    return top * (1 - ay) + bot * ay


def _background(kind: str, width: int, height: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "solid":
        return np.broadcast_to(np.array(SOLID_BG, dtype=np.float64), (height, width, 3)).copy()
    if kind == "stripes":
        yy, xx = np.mgrid[0:height, 0:width]
        band = ((xx + yy) // 7) % 2
        out = np.empty((height, width, 3))
        out[band == 0] = (60, 150, 80)
        out[band == 1] = (90, 180, 110)
        return out
    if kind == "blobs":
        raw = rng.normal(size=(height, width))
        field_ = ndimage.gaussian_filter(raw, sigma=6, mode="wrap")
        field_ = (field_ - field_.min()) / max(np.ptp(field_), 1e-9)
        out = np.empty((height, width, 3))
        out[..., 0] = 30 + 40 * field_
        out[..., 1] = 110 + 90 * field_
        out[..., 2] = 60 + 60 * field_
        return out
    raise InvalidRegion(f"unknown background {kind!r}")


def _default_seed(region: Rect) -> Rect:
    side = min(3 * TILE, (region.w // TILE) * TILE, (region.h // TILE) * TILE)
    if side < TILE:
        side = min(region.w, region.h)
    ox = min(TILE, region.w - side)
    oy = min(TILE, region.h - side)
    return Rect(region.x + ox, region.y + oy, side, side)


def generate_tiled_texture(tile_kind: str, region: Rect, canvas: tuple[int, int], noise_sigma: float = 0.0,
                           rng_seed: int = 0, background: str = "solid") -> SyntheticScene:
    """A canvas whose ``region`` holds a tiled 12x12 texture.

    ``canvas`` is ``(width, height)``. The tiling phase is anchored at the
    region's top-left corner. Gaussian pixel noise covers the whole canvas.
    """
    width, height = canvas
    if region.w < 1 or region.h < 1 or not region.inside(width, height):
        raise InvalidRegion(f"{region} not inside {width}x{height} canvas")
    rng = np.random.default_rng(rng_seed)
    tile = base_tile(tile_kind, rng_seed)
    clean = _background(background, width, height, rng)
    ys, xs = np.mgrid[0:region.h, 0:region.w]
    clean[region.slices()] = tile[ys % TILE, xs % TILE]
    truth = np.zeros((height, width), dtype=np.uint8)
    truth[region.slices()] = 255
    recipe = {"tile": tile_kind, "region": str(region), "canvas": [width, height],
              "noise_sigma": float(noise_sigma), "rng_seed": int(rng_seed),
              "background": background, "pastes": []}
    scene = SyntheticScene(clean, truth, _default_seed(region), recipe)
    scene.image = _finish(clean, noise_sigma, rng)
    scene.recipe["_clean"] = clean
    return scene


def _finish(clean: np.ndarray, noise_sigma: float, rng: np.random.Generator) -> np.ndarray:
    img = clean
    if noise_sigma > 0:
        img = clean + rng.normal(0.0, noise_sigma, size=clean.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def paste_warped_copy(scene: SyntheticScene, spec: TransformSpec, dst: Rect,
                      per_block: bool = False) -> SyntheticScene:
    """Render the scene's texture warped by ``spec`` into ``dst``.

    By default one warp spans ``dst``: it acts about the centre of ``dst`` and
    bends and scales are sized to its shorter side. With ``per_block`` every
    12x12 tile of ``dst`` (counted from its top-left corner) holds the base
    tile warped by the block-sized homography, the way the detector warps a
    template. Returns a new scene with the truth mask extended by ``dst``.
    """
    height, width = scene.truth.shape
    if dst.w < 2 or dst.h < 2 or not dst.inside(width, height):
        raise InvalidRegion(f"{dst} not inside {width}x{height} canvas")
    if scene.truth[dst.slices()].any():
        raise OverlapError(f"{dst} overlaps the existing texture region")
    ys, xs = np.mgrid[0:dst.h, 0:dst.w].astype(np.float64)
    if per_block:
        hinv = np.linalg.inv(homography_from_spec(spec, TILE))
        bx, by = xs // TILE, ys // TILE
        xs, ys = xs - bx * TILE, ys - by * TILE
    else:
        side = min(dst.w, dst.h)
        h = homography_from_spec(spec, side)
        hinv = np.linalg.inv(recenter(h, (dst.w - side) / 2.0, (dst.h - side) / 2.0))
    den = hinv[2, 0] * xs + hinv[2, 1] * ys + hinv[2, 2]
    sx = (hinv[0, 0] * xs + hinv[0, 1] * ys + hinv[0, 2]) / den
    sy = (hinv[1, 0] * xs + hinv[1, 1] * ys + hinv[1, 2]) / den
    tile = base_tile(scene.recipe["tile"], scene.recipe["rng_seed"])
    clean = scene.recipe["_clean"].copy()
    clean[dst.slices()] = sample_periodic(tile, sx, sy)
    truth = scene.truth.copy()
    truth[dst.slices()] = 255
    recipe = dict(scene.recipe)
    recipe["pastes"] = scene.recipe["pastes"] + [{"spec": spec.to_text(), "dst": str(dst),
                                                  "per_block": bool(per_block)}]
    recipe["_clean"] = clean
    rng = np.random.default_rng([scene.recipe["rng_seed"], len(recipe["pastes"])])
    image = _finish(clean, scene.recipe["noise_sigma"], rng)
    return SyntheticScene(image, truth, scene.seed_hint, recipe)


def iou(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a) > 0
    b = np.asarray(b) > 0
    if a.shape != b.shape:
        raise DimensionMismatch(f"mask shapes {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)



def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with a background 4-neighbour; the image frame does not count."""
    m = np.asarray(mask) > 0
    p = np.pad(m, 1, mode="edge")
    return m & ~(p[1:-1, 2:] & p[1:-1, :-2] & p[2:, 1:-1] & p[:-2, 1:-1])


def mean_boundary_distance(mask: np.ndarray, truth: np.ndarray) -> float:
    """Mean Euclidean distance from ``mask``'s boundary pixels to ``truth``'s."""
    a, b = boundary_pixels(mask), boundary_pixels(truth)
    if a.shape != b.shape:
        raise DimensionMismatch(f"mask shapes {a.shape} vs {b.shape}")
    if not a.any() or not b.any():
        return 0.0 if a.any() == b.any() else float("inf")
    return float(ndimage.distance_transform_edt(~b)[a].mean())


# --------------------------------------------------------------- experiments


@dataclass(frozen=True)
class SweepPoint:
    block_size: int
    selected_counts: dict

    @property
    def total(self) -> int:
        return sum(self.selected_counts.values())


SWEEP_TEMPLATES = 6


def sweep_block_size(img: np.ndarray, seed_region: Rect, sizes, cfg: DetectorConfig = DetectorConfig(),
                     n_templates: int = SWEEP_TEMPLATES) -> list[SweepPoint]:
    """Selected-block counts per round for each block size.

    Each run uses the first ``n_templates`` row-major templates of the seed.
    Seed cells (round 0) are counted with translation/mirror matches.
    """
    out = []
    for s in sizes:
        s = int(s)
        if s % 3:
            raise TexsegError(f"block size {s} is not divisible by 3")
        seed = SeedSpec.from_region(seed_region, s, max_templates=n_templates)
        if len(seed.templates) < n_templates:
            raise InvalidRegion(f"seed {seed_region} holds {len(seed.templates)} < {n_templates} blocks of {s}")
        grid = detect(img, seed, replace(cfg, block_size=s))
        c = grid.counts()
        out.append(SweepPoint(s, {"round1": c["round0"] + c["round1"], "round2": c["round2"],
                                  "round3": c["round3"], "default": c["default"]}))
    return out


def sweep_csv(points: list[SweepPoint]) -> str:
    rows = ["block_size,round1,round2,round3,default,total"]
    for p in points:
        c = p.selected_counts
        rows.append(f"{p.block_size},{c['round1']},{c['round2']},{c['round3']},{c['default']},{p.total}")
    return "\n".join(rows) + "\n"


def sweep_gnuplot(points: list[SweepPoint]) -> str:
    rows = ["# block_size round1 round2 round3 default total"]
    for p in points:
        c = p.selected_counts
        rows.append(f"{p.block_size} {c['round1']} {c['round2']} {c['round3']} {c['default']} {p.total}")
    return "\n".join(rows) + "\n"


@dataclass(frozen=True)
class BenchRow:
    threads: int
    ms: float
    speedup: float


def benchmark(img: np.ndarray, seed: SeedSpec, cfg: DetectorConfig, thread_counts, repeats: int = 3) -> list[BenchRow]:
    """Median wall-clock of ``detect`` per thread count.

    Raises if any thread count yields a different label grid.
    """
    rows = []
    reference = None
    base_ms = None
    for n in thread_counts:
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            grid = detect(img, seed, replace(cfg, thread_count=int(n)))
            times.append((time.perf_counter() - t0) * 1000.0)
            if reference is None:
                reference = grid
            elif not reference.same_labels(grid):
                raise TexsegError(f"label grid differs at {n} threads")
        ms = statistics.median(times)
        if base_ms is None:
            base_ms = ms
        rows.append(BenchRow(int(n), ms, base_ms / ms if ms > 0 else float("inf")))
    return rows


def bench_csv(rows: list[BenchRow]) -> str:
    return "threads,ms,speedup\n" + "".join(f"{r.threads},{r.ms:.1f},{r.speedup:.3f}\n" for r in rows)
