import colorsys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from texseg.errors import DimensionMismatch, OutOfBounds
from texseg.histogram import (N_BINS, HsvHistogram, bin_index_map, histogram_distance, hsv_histogram,
                              screen_by_corner_count, screen_by_histogram)
from texseg.raster import Rect, to_gray
from texseg.synth import base_tile


def _oracle_histogram(block):
    """Per-pixel loop using the stdlib HSV conversion."""
    hist = np.zeros(N_BINS)
    for r, g, b in block.reshape(-1, 3):
        h, s, v = colorsys.rgb_to_hsv(r / 255, g / 255, b / 255)
        hb = 0 if s < 0.05 else min(int(h * 8), 7)
        sb, vb = min(int(s * 4), 3), min(int(v * 4), 3)
        hist[(hb * 4 + sb) * 4 + vb] += 1
    return hist / hist.sum()


def test_uniform_red_single_bin():
    img = np.zeros((12, 12, 3), np.uint8)
    img[..., 0] = 255
    h = hsv_histogram(img, Rect(0, 0, 12, 12)).bins
    assert h.max() == 1.0 and (h > 0).sum() == 1


def test_two_colours_two_half_bins():
    img = np.zeros((12, 12, 3), np.uint8)
    img[:, :6] = (255, 0, 0)
    img[:, 6:] = (0, 0, 255)
    h = hsv_histogram(img, Rect(0, 0, 12, 12)).bins
    assert sorted(h[h > 0]) == [0.5, 0.5]


@given(arrays(np.uint8, (12, 12, 3), elements=st.integers(0, 255)))
def test_random_block_matches_oracle(block):
    h = hsv_histogram(block, Rect(0, 0, 12, 12)).bins
    assert h.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(h, _oracle_histogram(block), atol=1e-12)


def test_grey_pixels_go_to_hue_bin_zero():
    img = np.full((2, 2, 3), 200, np.uint8)
    img[0, 0] = (200, 199, 200)  # s < 0.05
    bins = bin_index_map(img)
    assert (bins // 16 == 0).all()


def test_histogram_out_of_bounds():
    with pytest.raises(OutOfBounds):
        hsv_histogram(np.zeros((4, 4, 3), np.uint8), Rect(2, 2, 3, 3))


def test_distance_examples():
    a = np.zeros(N_BINS)
    b = np.zeros(N_BINS)
    a[0], a[1] = 0.5, 0.5
    b[0] = 1.0
    assert histogram_distance(a, a) == 0
    c = np.zeros(N_BINS)
    c[5] = 1.0
    assert histogram_distance(b, c) == 2.0
    assert histogram_distance(a, b) == pytest.approx(1.0)
    assert histogram_distance(HsvHistogram(a), HsvHistogram(b)) == pytest.approx(1.0)
    with pytest.raises(DimensionMismatch):
        histogram_distance(a, np.zeros(8))


def _normalised():
    return arrays(np.float64, N_BINS, elements=st.floats(0, 1)).filter(lambda v: v.sum() > 1e-3).map(
        lambda v: v / v.sum())


@given(_normalised(), _normalised(), _normalised())
def test_distance_is_a_metric(a, b, c):
    ab, ba = histogram_distance(a, b), histogram_distance(b, a)
    assert ab == ba
    assert 0 <= ab <= 2 + 1e-9
    assert histogram_distance(a, a) == 0
    assert histogram_distance(a, c) <= ab + histogram_distance(b, c) + 1e-12


def _brick_and_blue():
    img = np.zeros((24, 48, 3), np.uint8)
    tile = base_tile("brick").astype(np.uint8)
    img[:, :24] = np.tile(tile, (2, 2, 1))
    img[:, 24:] = (40, 60, 200)
    return img


def test_screen_identity_and_bounds():
    img = _brick_and_blue()
    t = [Rect(0, 0, 12, 12)]
    reps = screen_by_histogram(img, t, [Rect(0, 0, 12, 12), Rect(12, 12, 12, 12), Rect(30, 6, 12, 12)], 0.0)
    assert reps[0].passed and reps[0].hist_distance == 0
    assert all(r.passed for r in screen_by_histogram(img, t, [Rect(x, 0, 12, 12) for x in range(0, 37, 3)], 2.0))


def test_solid_blue_rejected_against_brick():
    img = _brick_and_blue()
    reps = screen_by_histogram(img, [Rect(0, 0, 12, 12)], [Rect(30, 6, 12, 12)], 0.6)
    assert not reps[0].passed and reps[0].hist_distance == pytest.approx(2.0)


@given(st.floats(0, 2), st.floats(0, 2))
def test_screen_monotone_in_threshold(t1, t2):
    lo, hi = sorted((t1, t2))
    img = _brick_and_blue()
    cands = [Rect(x, y, 12, 12) for x in range(0, 37, 6) for y in (0, 6, 12)]
    a = [r.passed for r in screen_by_histogram(img, [Rect(0, 0, 12, 12)], cands, lo)]
    b = [r.passed for r in screen_by_histogram(img, [Rect(0, 0, 12, 12)], cands, hi)]
    assert all(y for x, y in zip(a, b) if x)


def _corner_scene():
    f = np.full((24, 48), 40.0)
    # a template with six well separated bright squares
    for cx, cy in ((2, 2), (7, 2), (2, 7), (7, 7), (4, 4), (9, 9)):
        f[cy:cy + 2, cx:cx + 2] = 220
    return f


def test_corner_screen_examples():
    from texseg.klt import TrackerParams, shi_tomasi_corners
    f = _corner_scene()
    prm = TrackerParams(max_corners=64)
    n_t = len(shi_tomasi_corners(f, Rect(0, 0, 12, 12), 64, prm.quality, prm.min_distance, prm.min_score))
    assert n_t >= 6
    same = screen_by_corner_count(f, [Rect(0, 0, 12, 12)], [Rect(0, 0, 12, 12)], 0.0, prm)
    assert same[0].passed and same[0].corner_count == n_t
    flat = screen_by_corner_count(f, [Rect(0, 0, 12, 12)], [Rect(30, 6, 12, 12)], 0.5, prm)
    assert flat[0].corner_count == 0 and not flat[0].passed
    wide = screen_by_corner_count(f, [Rect(0, 0, 12, 12)], [Rect(30, 6, 12, 12)], 100.0, prm)
    assert wide[0].passed


def test_corner_screen_on_texture():
    img = _brick_and_blue()
    reps = screen_by_corner_count(to_gray(img), [Rect(0, 0, 12, 12)], [Rect(12, 12, 12, 12), Rect(30, 6, 12, 12)])
    assert reps[0].passed and not reps[1].passed
