"""From a label grid to a clean binary mask.

Steps: drop isolated labels, trim blocks that straddle the texture edge using
3x3 edge-energy jumps, then snap the outline to Canny edges and low-pass it.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from .detector import UNVISITED, LabelGrid
from .errors import BadThresholds, DimensionMismatch, NotDivisibleBy3, RowTooShort
from .raster import gaussian_blur, sobel

ALPHA_THRESHOLD = 0.05
NEIGHBORHOOD = 9
TAU_THRESHOLD = 2.0
EPS = 1.0
CANNY_SIGMA = 1.4
CANNY_LOW = 20.0
CANNY_HIGH = 50.0
SNAP_BAND = 4
SMOOTH_SIGMA = 2.0

WHITE = 255


def labels_to_mask(grid: LabelGrid, img_w: int, img_h: int, s: int | None = None) -> np.ndarray:
    """Paint the union of labelled cells white on black."""
    s = grid.block_size if s is None else int(s)
    if (grid.image_w, grid.image_h) != (img_w, img_h) or s != grid.block_size:
        raise DimensionMismatch(f"grid built for {grid.image_w}x{grid.image_h} (s={grid.block_size}), "
                                f"asked for {img_w}x{img_h} (s={s})")
    mask = np.zeros((img_h, img_w), dtype=np.uint8)
    for gy, gx in zip(*np.nonzero(grid.labeled_mask())):
        mask[grid.rect(gx, gy).slices()] = WHITE
    return mask


def spurious_alpha(grid: LabelGrid, size: int = NEIGHBORHOOD) -> np.ndarray:
    """Fraction of labelled cells in each cell's ``size x size`` lattice window.

    Windows are clipped at the grid border and divided by the in-bounds count.
    """
    lab = grid.labeled_mask().astype(np.float64)
    ones = np.ones_like(lab)
    hits = ndimage.uniform_filter(lab, size=size, mode="constant", cval=0.0)
    inb = ndimage.uniform_filter(ones, size=size, mode="constant", cval=0.0)
    return hits / inb


def remove_spurious(grid: LabelGrid, alpha_threshold: float = ALPHA_THRESHOLD) -> LabelGrid:
    out = grid.copy()
    # rounding noise from the box filter must not flip exact ratios like 4/81
    alpha = np.round(spurious_alpha(grid), 12)
    drop = grid.labeled_mask() & (alpha < alpha_threshold)
    out.state[drop] = UNVISITED
    out.round[drop] = -1
    out.template[drop] = -1
    out.transform[drop] = -1
    return out


def local_edge_energy(block: np.ndarray) -> np.ndarray:
    """Sum of squared centre differences for each 3x3 cell of ``block``."""
    block = np.asarray(block, dtype=np.float64)
    h, w = block.shape
    if h % 3 or w % 3:
        raise NotDivisibleBy3(f"block {w}x{h} is not divisible into 3x3 cells")
    cells = block.reshape(h // 3, 3, w // 3, 3).transpose(0, 2, 1, 3)
    centre = cells[:, :, 1:2, 1:2]
    return ((cells - centre) ** 2).sum(axis=(2, 3))


def mutation_rate(e_row, eps: float = EPS) -> np.ndarray:
    """Relative jump between adjacent energies, one value per adjacent pair."""
    e = np.asarray(e_row, dtype=np.float64).ravel()
    if len(e) < 2:
        raise RowTooShort(f"need at least 2 energies, got {len(e)}")
    d = np.abs(np.diff(e))
    spread = max(e.max() - e.min(), eps)
    floor = np.maximum(np.minimum(e[1:], e[:-1]), eps)
    return (d / spread) * (d / floor)


def _open_side(grid: LabelGrid, gy: int, gx: int) -> tuple[int, int]:
    """Sign of the summed offsets of unlabelled neighbours (x, y)."""
    lab = grid.labeled_mask()
    ux = uy = 0
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx == dy == 0:
                continue
            y, x = gy + dy, gx + dx
            if 0 <= y < grid.grid_h and 0 <= x < grid.grid_w and not lab[y, x]:
                ux += dx
                uy += dy
    return int(np.sign(ux)), int(np.sign(uy))


def _keep_span(tau: np.ndarray, side: int, threshold: float, n: int) -> tuple[int, int]:
    """Cell range [lo, hi) to keep along one line of a block."""
    spikes = np.nonzero(tau > threshold)[0]
    if side == 0 or len(spikes) == 0:
        return 0, n
    if side > 0:
        return 0, int(spikes.max()) + 1
    return int(spikes.min()) + 1, n


def boundary_cells(grid: LabelGrid) -> np.ndarray:
    """Labelled cells with at least one unlabelled in-grid 8-neighbour."""
    lab = grid.labeled_mask()
    k = np.ones((3, 3))
    k[1, 1] = 0
    n_lab = ndimage.convolve(lab.astype(np.int64), k.astype(np.int64), mode="constant", cval=0)
    n_inb = ndimage.convolve(np.ones_like(lab, dtype=np.int64), k.astype(np.int64), mode="constant", cval=0)
    return lab & (n_lab < n_inb)


def block_footprint(gray: np.ndarray, grid: LabelGrid, gy: int, gx: int,
                    tau_threshold: float = TAU_THRESHOLD) -> np.ndarray:
    """Boolean s x s footprint a boundary cell keeps after trimming."""
    s = grid.block_size
    r = grid.rect(gx, gy)
    keep = np.ones((s, s), dtype=bool)
    side_x, side_y = _open_side(grid, gy, gx)
    if side_x == 0 and side_y == 0:
        return keep
    e = local_edge_energy(gray[r.slices()])
    n = s // 3
    if side_x:
        for i in range(n):
            lo, hi = _keep_span(mutation_rate(e[i]), side_x, tau_threshold, n)
            keep[3 * i:3 * i + 3, :3 * lo] = False
            keep[3 * i:3 * i + 3, 3 * hi:] = False
    if side_y:
        for j in range(n):
            lo, hi = _keep_span(mutation_rate(e[:, j]), side_y, tau_threshold, n)
            keep[:3 * lo, 3 * j:3 * j + 3] = False
            keep[3 * hi:, 3 * j:3 * j + 3] = False
    return keep


def refine_boundary(mask: np.ndarray, gray: np.ndarray, grid: LabelGrid,
                    tau_threshold: float = TAU_THRESHOLD) -> np.ndarray:
    """Rebuild the mask with boundary cells trimmed at their edge crossing.

    Interior cells contribute their full square; boundary cells only the
    part on the labelled side of the last energy jump. Pixels of ``mask``
    not covered by any labelled cell are left as they were.
    """
    gray = np.asarray(gray, dtype=np.float64)
    if mask.shape != gray.shape or mask.shape != (grid.image_h, grid.image_w):
        raise DimensionMismatch(f"mask {mask.shape}, gray {gray.shape}, grid {grid.image_h}x{grid.image_w}")
    lab = grid.labeled_mask()
    edge = boundary_cells(grid)
    covered = np.zeros(mask.shape, dtype=bool)
    kept = np.zeros(mask.shape, dtype=bool)
    for gy, gx in zip(*np.nonzero(lab)):
        sl = grid.rect(gx, gy).slices()
        covered[sl] = True
        if edge[gy, gx]:
            kept[sl] |= block_footprint(gray, grid, gy, gx, tau_threshold)
        else:
            kept[sl] = True
    out = mask.copy()
    out[covered] = np.where(kept[covered], WHITE, 0)
    return out


def canny_edges(f: np.ndarray, sigma: float = CANNY_SIGMA, low: float = CANNY_LOW,
                high: float = CANNY_HIGH) -> np.ndarray:
    """Binary Canny edge map (True on edges).

    Thresholds apply to the raw Sobel magnitude of the blurred field.
    Non-maximum suppression uses four quantised directions; hysteresis keeps
    8-connected weak runs that touch a strong pixel.
    """
    if not 0 < low < high:
        raise BadThresholds(f"need 0 < low < high, got low={low}, high={high}")
    g = gaussian_blur(f, sigma)
    gx, gy = sobel(g)
    mag = np.hypot(gx, gy)
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    p = np.pad(mag, 1, mode="constant")
    h, w = mag.shape

    def nb(dy, dx):
        return p[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]

    d0 = (angle < 22.5) | (angle >= 157.5)
    d45 = (angle >= 22.5) & (angle < 67.5)
    d90 = (angle >= 67.5) & (angle < 112.5)
    d135 = (angle >= 112.5) & (angle < 157.5)
    # y points down, so a 45-degree gradient runs toward (+x, +y)
    a = np.select([d0, d45, d90, d135], [nb(0, 1), nb(1, 1), nb(1, 0), nb(1, -1)])
    b = np.select([d0, d45, d90, d135], [nb(0, -1), nb(-1, -1), nb(-1, 0), nb(-1, 1)])
    thin = (mag >= a) & (mag >= b) & (mag > 0)
    # the image frame carries no edges (one-sided gradients)
    thin[0, :] = thin[-1, :] = thin[:, 0] = thin[:, -1] = False
    weak = thin & (mag >= low)
    strong = thin & (mag >= high)
    labels, n = ndimage.label(weak, structure=np.ones((3, 3)))
    if n == 0:
        return np.zeros_like(weak)
    keep = np.zeros(n + 1, dtype=bool)
    keep[np.unique(labels[strong])] = True
    keep[0] = False
    return keep[labels]


def _snap_lines(mask: np.ndarray, edges: np.ndarray, band: int) -> np.ndarray:
    """Move each 0/1 transition along every row to the nearest edge pixel."""
    out = mask.copy()
    h, w = mask.shape
    for y in range(h):
        row = mask[y]
        erow = np.nonzero(edges[y])[0]
        if len(erow) == 0:
            continue
        for x in np.nonzero(row[1:] != row[:-1])[0]:
            # boundary sits between pixel x and x + 1
            cand = erow[np.abs(erow - (x + 0.5)) <= band]
            if len(cand) == 0:
                continue
            e = int(cand[np.argmin(np.abs(cand - (x + 0.5)))])
            inside_left = bool(row[x])
            # the edge pixel itself goes to the inside
            if inside_left:
                if e > x:
                    out[y, x + 1:e + 1] = True
                else:
                    out[y, e + 1:x + 1] = False
            else:
                if e > x:
                    out[y, x + 1:e] = False
                else:
                    out[y, e:x + 1] = True
    return out


def smooth_mask(mask: np.ndarray, edge_map: np.ndarray, sigma: float = SMOOTH_SIGMA,
                band: int = SNAP_BAND) -> np.ndarray:
    """Snap the outline to nearby edges, then blur and re-threshold at half."""
    mask = np.asarray(mask)
    edge_map = np.asarray(edge_map).astype(bool)
    if mask.shape != edge_map.shape:
        raise DimensionMismatch(f"mask {mask.shape} vs edge map {edge_map.shape}")
    m = mask > 0
    rows = _snap_lines(m, edge_map, band)
    cols = _snap_lines(m.T, edge_map.T, band).T
    # a pixel follows whichever pass moved it; agreement keeps the original
    snapped = np.where(rows != m, rows, cols)
    soft = gaussian_blur(snapped.astype(np.float64), sigma)
    return np.where(soft >= 0.5, WHITE, 0).astype(np.uint8)


def refine(grid: LabelGrid, gray: np.ndarray, alpha_threshold: float = ALPHA_THRESHOLD,
           tau_threshold: float = TAU_THRESHOLD, canny_sigma: float = CANNY_SIGMA, canny_low: float = CANNY_LOW,
           canny_high: float = CANNY_HIGH, smooth_sigma: float = SMOOTH_SIGMA) -> tuple[LabelGrid, np.ndarray]:
    """The whole mask stage; returns the cleaned grid and the final mask."""
    grid = remove_spurious(grid, alpha_threshold)
    height, width = gray.shape
    mask = labels_to_mask(grid, width, height)
    mask = refine_boundary(mask, gray, grid, tau_threshold)
    edges = canny_edges(gray, canny_sigma, canny_low, canny_high)
    return grid, smooth_mask(mask, edges, smooth_sigma)


def snap_reach(sigma: float, band: int = SNAP_BAND) -> int:
    """Furthest a pixel can move from the input outline under :func:`smooth_mask`."""
    return band + int(math.ceil(3 * sigma))
