"""Hot inner loops, each with a numba kernel and a pure-numpy twin.

The public names at the bottom (``warp_bilinear``, ``pick_corners``,
``match_cells``, ``track_points``) dispatch to one implementation according to
:mod:`texseg._accel`. Both implementations are importable directly so tests
and the backend benchmark can compare them.
"""
from __future__ import annotations

import numpy as np

from ._accel import USE_NUMBA, njit

# track status codes
TRACK_OK = 0
TRACK_DEGENERATE = 1
TRACK_LOST = 2


# ------------------------------------------------------------ bilinear warp


@njit
def _warp_bilinear_nb(src, hinv, out_h, out_w):
    h, w = src.shape
    out = np.empty((out_h, out_w), dtype=np.float64)
    for y in range(out_h):
        for x in range(out_w):
            den = hinv[2, 0] * x + hinv[2, 1] * y + hinv[2, 2]
            sx = (hinv[0, 0] * x + hinv[0, 1] * y + hinv[0, 2]) / den
            sy = (hinv[1, 0] * x + hinv[1, 1] * y + hinv[1, 2]) / den
            if sx < 0.0:
                sx = 0.0
            elif sx > w - 1:
                sx = w - 1.0
            if sy < 0.0:
                sy = 0.0
            elif sy > h - 1:
                sy = h - 1.0
            x0 = int(sx)
            y0 = int(sy)
            if x0 > w - 2:
                x0 = max(w - 2, 0)
            if y0 > h - 2:
                y0 = max(h - 2, 0)
            ax = sx - x0
            ay = sy - y0
            x1 = min(x0 + 1, w - 1)
            y1 = min(y0 + 1, h - 1)
            top = src[y0, x0] * (1.0 - ax) + src[y0, x1] * ax
            bot = src[y1, x0] * (1.0 - ax) + src[y1, x1] * ax
            out[y, x] = top * (1.0 - ay) + bot * ay
    return out


def _bilinear_np(img, sx, sy):
    """Bilinear samples of ``img`` at float coords, clamped to the border."""
    h, w = img.shape
    sx = np.clip(sx, 0.0, w - 1.0)
    sy = np.clip(sy, 0.0, h - 1.0)
    x0 = np.minimum(sx.astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(sy.astype(np.intp), max(h - 2, 0))
    ax = sx - x0
    ay = sy - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = img[y0, x0] * (1.0 - ax) + img[y0, x1] * ax
    bot = img[y1, x0] * (1.0 - ax) + img[y1, x1] * ax
    return top * (1.0 - ay) + bot * ay


def _warp_bilinear_np(src, hinv, out_h, out_w):
    ys, xs = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    den = hinv[2, 0] * xs + hinv[2, 1] * ys + hinv[2, 2]
    sx = (hinv[0, 0] * xs + hinv[0, 1] * ys + hinv[0, 2]) / den
    sy = (hinv[1, 0] * xs + hinv[1, 1] * ys + hinv[1, 2]) / den
    return _bilinear_np(np.asarray(src, dtype=np.float64), sx, sy)


# ------------------------------------------------------- corner selection


@njit
def _pick_corners_nb(score, is_max, x0, y0, x1, y1, max_corners, quality, min_score, min_dist):
    best = 0.0
    for y in range(y0, y1):
        for x in range(x0, x1):
            if score[y, x] > best:
                best = score[y, x]
    out = np.empty((max_corners, 3), dtype=np.float64)
    if best <= 0.0:
        return out[:0]
    thr = quality * best
    if thr < min_score:
        thr = min_score
    n = 0
    for y in range(y0, y1):
        for x in range(x0, x1):
            if is_max[y, x] and score[y, x] >= thr and score[y, x] > 0.0:
                n += 1
    cand = np.empty((n, 3), dtype=np.float64)
    k = 0
    for y in range(y0, y1):
        for x in range(x0, x1):
            if is_max[y, x] and score[y, x] >= thr and score[y, x] > 0.0:
                cand[k, 0] = -score[y, x]
                cand[k, 1] = y
                cand[k, 2] = x
                k += 1
    # lexsort on (score desc, y, x); candidates are already in (y, x) order
    order = np.argsort(cand[:, 0], kind="mergesort")
    d2 = min_dist * min_dist
    m = 0
    for idx in order:
        cy = cand[idx, 1]
        cx = cand[idx, 2]
        ok = True
        for j in range(m):
            dy = out[j, 1] - cy
            dx = out[j, 0] - cx
            if dx * dx + dy * dy < d2:
                ok = False
                break
        if ok:
            out[m, 0] = cx
            out[m, 1] = cy
            out[m, 2] = -cand[idx, 0]
            m += 1
            if m == max_corners:
                break
    return out[:m]


def _pick_corners_np(score, is_max, x0, y0, x1, y1, max_corners, quality, min_score, min_dist):
    win = score[y0:y1, x0:x1]
    best = float(win.max()) if win.size else 0.0
    if best <= 0.0:
        return np.empty((0, 3))
    thr = max(quality * best, min_score)
    ok = is_max[y0:y1, x0:x1] & (win >= thr) & (win > 0.0)
    ys, xs = np.nonzero(ok)
    s = win[ys, xs]
    order = np.argsort(-s, kind="mergesort")
    xs = (xs[order] + x0).astype(np.float64)
    ys = (ys[order] + y0).astype(np.float64)
    s = s[order]
    keep = []
    d2 = min_dist * min_dist
    for i in range(len(s)):
        if all((xs[i] - xs[j]) ** 2 + (ys[i] - ys[j]) ** 2 >= d2 for j in keep):
            keep.append(i)
            if len(keep) == max_corners:
                break
    keep = np.asarray(keep, dtype=np.intp)
    return np.stack([xs[keep], ys[keep], s[keep]], axis=1) if len(keep) else np.empty((0, 3))


@njit
def _count_corners_batch_nb(score, is_max, origins, s, max_corners, quality, min_score, min_dist):
    n = origins.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        x0 = origins[i, 0]
        y0 = origins[i, 1]
        out[i] = _pick_corners_nb(score, is_max, x0, y0, x0 + s, y0 + s, max_corners,
                                  quality, min_score, min_dist).shape[0]
    return out


def _count_corners_batch_np(score, is_max, origins, s, max_corners, quality, min_score, min_dist):
    return np.array([
        _pick_corners_np(score, is_max, int(x), int(y), int(x) + s, int(y) + s,
                         max_corners, quality, min_score, min_dist).shape[0]
        for x, y in origins
    ], dtype=np.int64)


# ------------------------------------------------------------- KLT tracking
#
# Template data for one template/transform pair ("feature set") is prepared
# once: for every corner c and level l the template window samples T, its
# gradients GX/GY and the inverse of the 2x2 gradient matrix. Tracking then
# only resamples the destination pyramid.


@njit
def _sample(img, x, y):
    h, w = img.shape
    if x < 0.0:
        x = 0.0
    elif x > w - 1:
        x = w - 1.0
    if y < 0.0:
        y = 0.0
    elif y > h - 1:
        y = h - 1.0
    x0 = int(x)
    y0 = int(y)
    if x0 > w - 2:
        x0 = max(w - 2, 0)
    if y0 > h - 2:
        y0 = max(h - 2, 0)
    ax = x - x0
    ay = y - y0
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    top = img[y0, x0] * (1.0 - ax) + img[y0, x1] * ax
    bot = img[y1, x0] * (1.0 - ax) + img[y1, x1] * ax
    return top * (1.0 - ay) + bot * ay


@njit
def _track_one(dst, T, GX, GY, GINV, OK, px, py, radius, max_iter, eps):
    """Track one prepared corner from initial guess (px, py) at level 0.

    Returns (x, y, status, residual); x, y are level-0 coordinates.
    """
    levels = len(dst)
    gx_acc = 0.0
    gy_acc = 0.0
    nwin = 2 * radius + 1
    for li in range(levels):
        lev = levels - 1 - li
        if not OK[lev]:
            return px, py, TRACK_DEGENERATE, np.inf
        img = dst[lev]
        h, w = img.shape
        scale = 1.0 / (1 << lev)
        bx = px * scale + gx_acc
        by = py * scale + gy_acc
        dx = 0.0
        dy = 0.0
        a = GINV[lev, 0]
        b = GINV[lev, 1]
        c = GINV[lev, 2]
        for _ in range(max_iter):
            cx = bx + dx
            cy = by + dy
            if cx < 0.0 or cy < 0.0 or cx > w - 1 or cy > h - 1:
                return cx / scale, cy / scale, TRACK_LOST, np.inf
            ex = 0.0
            ey = 0.0
            k = 0
            for wy in range(nwin):
                for wx in range(nwin):
                    diff = T[lev, k] - _sample(img, cx + wx - radius, cy + wy - radius)
                    ex += diff * GX[lev, k]
                    ey += diff * GY[lev, k]
                    k += 1
            sx = a * ex + b * ey
            sy = b * ex + c * ey
            dx += sx
            dy += sy
            if sx * sx + sy * sy < eps * eps:
                break
        if lev > 0:
            gx_acc = 2.0 * (gx_acc + dx)
            gy_acc = 2.0 * (gy_acc + dy)
        else:
            gx_acc = gx_acc + dx
            gy_acc = gy_acc + dy
    fx = px + gx_acc
    fy = py + gy_acc
    img = dst[0]
    h, w = img.shape
    if fx < 0.0 or fy < 0.0 or fx > w - 1 or fy > h - 1:
        return fx, fy, TRACK_LOST, np.inf
    res = 0.0
    k = 0
    for wy in range(nwin):
        for wx in range(nwin):
            res += abs(T[0, k] - _sample(img, fx + wx - radius, fy + wy - radius))
            k += 1
    return fx, fy, TRACK_OK, res / (nwin * nwin)


@njit
def _track_points_nb(dst, T, GX, GY, GINV, OK, guess, radius, max_iter, eps):
    n = guess.shape[0]
    pos = np.empty((n, 2), dtype=np.float64)
    status = np.empty(n, dtype=np.int64)
    resid = np.empty(n, dtype=np.float64)
    for i in range(n):
        x, y, st, r = _track_one(dst, T[i], GX[i], GY[i], GINV[i], OK[i],
                                 guess[i, 0], guess[i, 1], radius, max_iter, eps)
        pos[i, 0] = x
        pos[i, 1] = y
        status[i] = st
        resid[i] = r
    return pos, status, resid


@njit
def _match_cells_nb(dst, npts, pts, T, GX, GY, GINV, OK, origins, assigned, attempts,
                    pair_offset, s, radius, max_iter, eps, resid_thr, unmatched_thr,
                    min_features, margin):
    """First-match search of a chunk of feature sets over pending cells.

    ``assigned[i] >= 0`` marks a cell already matched; otherwise the index of
    the first matching feature set (plus ``pair_offset``) is written there.
    """
    ncell = origins.shape[0]
    npair = npts.shape[0]
    for i in range(ncell):
        if assigned[i] >= 0:
            continue
        ox = origins[i, 0]
        oy = origins[i, 1]
        lo_x = ox - margin
        lo_y = oy - margin
        hi_x = ox + s - 1 + margin
        hi_y = oy + s - 1 + margin
        for k in range(npair):
            n = npts[k]
            if n < min_features:
                continue
            attempts[i] += 1
            # a verdict is lost once unmatched / n >= unmatched_thr
            unmatched = 0
            failed = False
            for c in range(n):
                x, y, st, r = _track_one(dst, T[k, c], GX[k, c], GY[k, c], GINV[k, c], OK[k, c],
                                         ox + pts[k, c, 0], oy + pts[k, c, 1],
                                         radius, max_iter, eps)
                if st != TRACK_OK or r > resid_thr or x < lo_x or x > hi_x or y < lo_y or y > hi_y:
                    unmatched += 1
                    if unmatched >= unmatched_thr * n:
                        failed = True
                        break
            if not failed:
                assigned[i] = pair_offset + k
                break


def _track_batch_np(dst, T, GX, GY, GINV, OK, guess, radius, max_iter, eps):
    """Vectorised pyramidal LK over a batch of prepared corners.

    T, GX, GY: (n, L, win*win); GINV: (n, L, 3); OK: (n, L); guess: (n, 2).
    Mirrors ``_track_one`` step for step.
    """
    n = guess.shape[0]
    levels = len(dst)
    nwin = 2 * radius + 1
    offy, offx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    offx = offx.ravel().astype(np.float64)
    offy = offy.ravel().astype(np.float64)
    status = np.full(n, TRACK_OK, dtype=np.int64)
    posx = guess[:, 0].astype(np.float64).copy()
    posy = guess[:, 1].astype(np.float64).copy()
    gx_acc = np.zeros(n)
    gy_acc = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    for lev in range(levels - 1, -1, -1):
        img = dst[lev]
        h, w = img.shape
        scale = 1.0 / (1 << lev)
        degenerate = alive & ~OK[:, lev]
        status[degenerate] = TRACK_DEGENERATE
        alive &= ~degenerate
        bx = guess[:, 0] * scale + gx_acc
        by = guess[:, 1] * scale + gy_acc
        dx = np.zeros(n)
        dy = np.zeros(n)
        active = alive.copy()
        a, b, c = GINV[:, lev, 0], GINV[:, lev, 1], GINV[:, lev, 2]
        for _ in range(max_iter):
            idx = np.nonzero(active)[0]
            if idx.size == 0:
                break
            cx = bx[idx] + dx[idx]
            cy = by[idx] + dy[idx]
            lost = (cx < 0.0) | (cy < 0.0) | (cx > w - 1) | (cy > h - 1)
            if lost.any():
                li = idx[lost]
                status[li] = TRACK_LOST
                posx[li] = cx[lost] / scale
                posy[li] = cy[lost] / scale
                alive[li] = False
                active[li] = False
                idx = idx[~lost]
                cx = cx[~lost]
                cy = cy[~lost]
            if idx.size == 0:
                break
            samp = _bilinear_np(img, cx[:, None] + offx[None, :], cy[:, None] + offy[None, :])
            diff = T[idx, lev] - samp
            ex = np.einsum("ij,ij->i", diff, GX[idx, lev])
            ey = np.einsum("ij,ij->i", diff, GY[idx, lev])
            sx = a[idx] * ex + b[idx] * ey
            sy = b[idx] * ex + c[idx] * ey
            dx[idx] += sx
            dy[idx] += sy
            done = sx * sx + sy * sy < eps * eps
            active[idx[done]] = False
        if lev > 0:
            gx_acc = np.where(alive, 2.0 * (gx_acc + dx), gx_acc)
            gy_acc = np.where(alive, 2.0 * (gy_acc + dy), gy_acc)
        else:
            gx_acc = np.where(alive, gx_acc + dx, gx_acc)
            gy_acc = np.where(alive, gy_acc + dy, gy_acc)
    fx = guess[:, 0] + gx_acc
    fy = guess[:, 1] + gy_acc
    h, w = dst[0].shape
    resid = np.full(n, np.inf)
    out_b = alive & ((fx < 0.0) | (fy < 0.0) | (fx > w - 1) | (fy > h - 1))
    status[out_b] = TRACK_LOST
    alive &= ~out_b
    posx = np.where(alive | out_b, fx, posx)
    posy = np.where(alive | out_b, fy, posy)
    idx = np.nonzero(alive)[0]
    if idx.size:
        samp = _bilinear_np(dst[0], fx[idx, None] + offx[None, :], fy[idx, None] + offy[None, :])
        resid[idx] = np.abs(T[idx, 0] - samp).sum(axis=1) / (nwin * nwin)
    return np.stack([posx, posy], axis=1), status, resid


def _track_points_np(dst, T, GX, GY, GINV, OK, guess, radius, max_iter, eps):
    if guess.shape[0] == 0:
        return np.empty((0, 2)), np.empty(0, dtype=np.int64), np.empty(0)
    return _track_batch_np(dst, T, GX, GY, GINV, OK, guess, radius, max_iter, eps)


def _match_cells_np(dst, npts, pts, T, GX, GY, GINV, OK, origins, assigned, attempts,
                    pair_offset, s, radius, max_iter, eps, resid_thr, unmatched_thr,
                    min_features, margin):
    for k in range(npts.shape[0]):
        n = int(npts[k])
        if n < min_features:
            continue
        pending = np.nonzero(assigned < 0)[0]
        if pending.size == 0:
            break
        attempts[pending] += 1
        m = pending.size
        guess = (origins[pending, None, :] + pts[None, k, :n, :]).reshape(m * n, 2)
        rep = lambda a: np.broadcast_to(a[k, :n][None], (m,) + a[k, :n].shape).reshape((m * n,) + a.shape[2:])
        pos, status, resid = _track_batch_np(dst, rep(T), rep(GX), rep(GY), rep(GINV), rep(OK),
                                             guess.astype(np.float64), radius, max_iter, eps)
        ox = np.repeat(origins[pending, 0], n)
        oy = np.repeat(origins[pending, 1], n)
        bad = ((status != TRACK_OK) | (resid > resid_thr)
               | (pos[:, 0] < ox - margin) | (pos[:, 0] > ox + s - 1 + margin)
               | (pos[:, 1] < oy - margin) | (pos[:, 1] > oy + s - 1 + margin))
        unmatched = bad.reshape(m, n).sum(axis=1)
        hit = unmatched < unmatched_thr * n
        assigned[pending[hit]] = pair_offset + k


# ---------------------------------------------------------------- dispatch

if USE_NUMBA:
    warp_bilinear = _warp_bilinear_nb
    pick_corners = _pick_corners_nb
    count_corners_batch = _count_corners_batch_nb
    track_points = _track_points_nb
    match_cells = _match_cells_nb
else:
    warp_bilinear = _warp_bilinear_np
    pick_corners = _pick_corners_np
    count_corners_batch = _count_corners_batch_np
    track_points = _track_points_np
    match_cells = _match_cells_np

NUMBA_KERNELS = {
    "warp_bilinear": _warp_bilinear_nb,
    "pick_corners": _pick_corners_nb,
    "count_corners_batch": _count_corners_batch_nb,
    "track_points": _track_points_nb,
    "match_cells": _match_cells_nb,
}
NUMPY_KERNELS = {
    "warp_bilinear": _warp_bilinear_np,
    "pick_corners": _pick_corners_np,
    "count_corners_batch": _count_corners_batch_np,
    "track_points": _track_points_np,
    "match_cells": _match_cells_np,
}
