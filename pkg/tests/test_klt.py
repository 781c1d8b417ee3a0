import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import smooth_field
from texseg.errors import PointOutOfBounds, RegionTooSmall, SizeMismatch, TooManyLevels
from texseg.klt import (CornerPoint, MatchVerdict, TrackerParams, build_pyramid, klt_track, match_blocks,
                        min_eigen_map, shi_tomasi_corners, verdict)
from texseg.raster import Rect
from texseg.synth import base_tile


def _brute_min_eigen(f):
    """Structure tensor from explicit Sobel loops (edge replicated)."""
    h, w = f.shape
    p = np.pad(f, 2, mode="edge")
    kx = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], float)
    gx = np.zeros((h + 2, w + 2))
    gy = np.zeros((h + 2, w + 2))
    for y in range(h + 2):
        for x in range(w + 2):
            win = p[y:y + 3, x:x + 3]
            gx[y, x] = (win * kx).sum()
            gy[y, x] = (win * kx.T).sum()
    # the outer ring must see replicated gradients, as in a padded image
    gx = np.pad(gx[1:-1, 1:-1], 1, mode="edge")
    gy = np.pad(gy[1:-1, 1:-1], 1, mode="edge")
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            a = (gx[y:y + 3, x:x + 3] ** 2).sum()
            c = (gy[y:y + 3, x:x + 3] ** 2).sum()
            b = (gx[y:y + 3, x:x + 3] * gy[y:y + 3, x:x + 3]).sum()
            out[y, x] = max(np.linalg.eigvalsh([[a, b], [b, c]])[0], 0.0)
    return out


def test_min_eigen_against_brute_force(rng):
    f = rng.uniform(0, 255, (9, 11))
    assert np.allclose(min_eigen_map(f), _brute_min_eigen(f), rtol=1e-9, atol=1e-6)


def test_constant_field_has_no_corners():
    assert shi_tomasi_corners(np.full((12, 12), 77.0), Rect(0, 0, 12, 12)) == []


def test_single_pixel_gives_one_cluster():
    f = np.zeros((15, 15))
    f[7, 7] = 255
    cs = shi_tomasi_corners(f, Rect(0, 0, 15, 15), max_corners=50, quality=0.01, min_distance=1)
    assert cs
    assert all(abs(c.x - 7) <= 1 and abs(c.y - 7) <= 1 for c in cs)
    score = _brute_min_eigen(f)
    best = np.unravel_index(np.argmax(score), score.shape)
    assert (cs[0].y, cs[0].x) == best


def test_checkerboard_corners_at_junctions():
    yy, xx = np.mgrid[0:24, 0:24]
    f = np.where(((yy // 4) + (xx // 4)) % 2 == 0, 200.0, 40.0)
    cs = shi_tomasi_corners(f, Rect(2, 2, 20, 20), max_corners=100, quality=0.05, min_distance=2)
    assert len(cs) >= 9
    for c in cs:
        # junctions sit between pixels 4k-1 and 4k
        jx, jy = (c.x + 0.5) / 4, (c.y + 0.5) / 4
        assert abs(jx - round(jx)) * 4 <= 1.0 and abs(jy - round(jy)) * 4 <= 1.0


@given(st.integers(0, 10_000))
def test_corner_list_contract(seed):
    f = smooth_field(np.random.default_rng(seed), 24, 24, 1.5)
    region = Rect(4, 5, 12, 12)
    cs = shi_tomasi_corners(f, region, max_corners=10, quality=0.05, min_distance=2)
    assert cs == shi_tomasi_corners(f, region, max_corners=10, quality=0.05, min_distance=2)
    assert len(cs) <= 10
    scores = [c.score for c in cs]
    assert scores == sorted(scores, reverse=True)
    for i, a in enumerate(cs):
        assert region.x <= a.x < region.x2 and region.y <= a.y < region.y2
        for b in cs[i + 1:]:
            assert np.hypot(a.x - b.x, a.y - b.y) >= 2
    if cs:
        assert min(scores) >= 0.05 * max(scores)


def test_corner_region_errors():
    with pytest.raises(RegionTooSmall):
        shi_tomasi_corners(np.zeros((12, 12)), Rect(0, 0, 2, 5))
    with pytest.raises(RegionTooSmall):
        shi_tomasi_corners(np.zeros((12, 12)), Rect(5, 5, 12, 12))


def test_min_score_floor_drops_weak_corners():
    f = np.zeros((15, 15))
    f[7, 7] = 3.0
    assert shi_tomasi_corners(f, Rect(0, 0, 15, 15), quality=0.01)
    assert shi_tomasi_corners(f, Rect(0, 0, 15, 15), quality=0.01, min_score=5000.0) == []


# ------------------------------------------------------------------ pyramid


def test_pyramid_examples(rng):
    f = rng.uniform(0, 255, (64, 64))
    assert len(build_pyramid(f, 1)) == 1 and np.array_equal(build_pyramid(f, 1)[0], f)
    assert [p.shape for p in build_pyramid(f, 3)] == [(64, 64), (32, 32), (16, 16)]
    assert all(np.allclose(p, 9.0) for p in build_pyramid(np.full((40, 40), 9.0), 3))
    assert [p.shape for p in build_pyramid(rng.uniform(size=(33, 20)), 2)] == [(33, 20), (16, 10)]


def test_pyramid_too_deep():
    with pytest.raises(TooManyLevels):
        build_pyramid(np.zeros((30, 30)), 3)
    with pytest.raises(TooManyLevels):
        build_pyramid(np.zeros((30, 30)), 0)


# ----------------------------------------------------------------- tracking


def _shifted_pair(rng, a, b, size=64, sigma=3.0):
    big = smooth_field(rng, size + 16, size + 16, sigma)
    src = big[8:8 + size, 8:8 + size]
    dst = big[8 - b:8 - b + size, 8 - a:8 - a + size]
    return src, dst


def _corners(f):
    return shi_tomasi_corners(f, Rect(12, 12, f.shape[1] - 24, f.shape[0] - 24), 20, 0.05, 3.0)


def test_zero_motion_fixed_point(rng):
    f = smooth_field(rng)
    for c in _corners(f):
        r = klt_track(f, f, c)
        assert r.converged
        assert np.hypot(r.displaced[0] - c.x, r.displaced[1] - c.y) < 0.03


def test_integer_shift_recovered(rng):
    src, dst = _shifted_pair(rng, 2, 1)
    for c in _corners(src):
        r = klt_track(src, dst, c)
        assert r.converged
        assert abs(r.displaced[0] - c.x - 2) <= 0.25 and abs(r.displaced[1] - c.y - 1) <= 0.25


@given(st.integers(-3, 3), st.integers(-3, 3), st.integers(0, 1000))
def test_shift_equivariance(a, b, seed):
    src, dst = _shifted_pair(np.random.default_rng(seed), a, b)
    cs = _corners(src)
    ok = 0
    for c in cs:
        r = klt_track(src, dst, c)
        if r.converged and abs(r.displaced[0] - c.x - a) <= 0.25 and abs(r.displaced[1] - c.y - b) <= 0.25:
            ok += 1
    assert ok >= 0.9 * len(cs)


def test_unrelated_noise_not_tracked(rng):
    lost = total = 0
    for _ in range(5):
        src = smooth_field(rng)
        dst = rng.uniform(0, 255, src.shape)
        for c in _corners(src):
            r = klt_track(src, dst, c)
            total += 1
            lost += (not r.converged) or r.residual > 12
    assert lost >= 0.85 * total


def test_track_result_invariants(rng):
    src, dst = _shifted_pair(rng, 1, -2)
    for c in _corners(src):
        r = klt_track(src, dst, c)
        assert (r.displaced is not None) == r.converged
        if r.converged:
            assert np.isfinite(r.residual) and r.residual >= 0


def test_track_point_too_close_to_border(rng):
    f = smooth_field(rng)
    with pytest.raises(PointOutOfBounds):
        klt_track(f, f, CornerPoint(1.0, 30.0, 1.0))


# ----------------------------------------------------------------- matching


def _textured(size=48, seed=3):
    tile = base_tile("noise_patch", seed).mean(axis=2)
    return np.tile(tile, (size // 12, size // 12))


def test_identical_blocks_match():
    f = _textured()
    v = match_blocks(f, Rect(12, 12, 12, 12), f, Rect(12, 12, 12, 12))
    assert v.matched and v.proportion_unmatched == 0 and v.tracked >= 3


def test_periodic_copy_matches():
    f = _textured()
    assert match_blocks(f, Rect(12, 12, 12, 12), f, Rect(24, 24, 12, 12)).matched


def test_noise_candidates_rejected(rng):
    f = _textured()
    rejected = 0
    for _ in range(100):
        dst = rng.uniform(0, 255, f.shape)
        rejected += not match_blocks(f, Rect(12, 12, 12, 12), dst, Rect(18, 18, 12, 12)).matched
    assert rejected >= 95


def test_flat_template():
    f = np.full((48, 48), 90.0)
    assert match_blocks(f, Rect(12, 12, 12, 12), f, Rect(0, 0, 12, 12)) == MatchVerdict(0, 0, 0.0, False)


def test_size_mismatch():
    f = _textured()
    with pytest.raises(SizeMismatch):
        match_blocks(f, Rect(0, 0, 12, 12), f, Rect(0, 0, 12, 9))


@given(st.floats(1.0, 40.0), st.floats(0.0, 40.0), st.integers(0, 3), st.integers(0, 3))
def test_residual_threshold_monotone(thr, extra, dx, dy):
    f = _textured()
    g = f + np.random.default_rng(7).normal(0, 6, f.shape)
    lo = TrackerParams(residual_threshold=thr)
    hi = TrackerParams(residual_threshold=thr + extra)
    a = match_blocks(f, Rect(12, 12, 12, 12), g, Rect(12 + dx, 12 + dy, 12, 12), lo)
    b = match_blocks(f, Rect(12, 12, 12, 12), g, Rect(12 + dx, 12 + dy, 12, 12), hi)
    assert b.matched or not a.matched
    assert b.tracked >= a.tracked


@given(st.integers(0, 20), st.integers(0, 20))
def test_verdict_invariant(tracked, unmatched):
    v = verdict(tracked, unmatched)
    assert v.proportion_unmatched == unmatched / max(tracked + unmatched, 1)
    assert v.matched == (v.proportion_unmatched < 0.15 and tracked + unmatched >= 3)
