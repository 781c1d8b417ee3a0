"""The numba kernels and their numpy twins must agree on the same inputs."""
import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import smooth_field
from texseg import kernels
from texseg.detector import DetectorConfig, SearchContext, SeedSpec, _stack_features, enumerate_candidates
from texseg.klt import corner_maps
from texseg.raster import Rect
from texseg.synth import generate_tiled_texture
from texseg.warp import TransformSpec, homography_from_spec

NB, NP = kernels.NUMBA_KERNELS, kernels.NUMPY_KERNELS


def _same(a, b):
    if isinstance(a, tuple):
        return len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    a, b = np.asarray(a), np.asarray(b)
    if a.dtype.kind == "f":
        return a.shape == b.shape and np.allclose(a, b, atol=1e-6, equal_nan=True)
    return np.array_equal(a, b)


@given(st.integers(0, 1000), st.integers(-40, 40).map(lambda k: 5.0 * k), st.sampled_from([0.8, 1.0, 1.3]),
       st.sampled_from(["none", "above", "left"]))
def test_warp_agrees(seed, angle, scale, bend):
    src = np.random.default_rng(seed).uniform(0, 255, (20, 20))
    spec = (TransformSpec("perspective", angle, scale, bend, 0.16) if bend != "none"
            else TransformSpec("rotation_scale", angle, scale))
    hinv = np.linalg.inv(homography_from_spec(spec, 20))
    assert _same(NB["warp_bilinear"](src, hinv, 20, 20), NP["warp_bilinear"](src, hinv, 20, 20))


@given(st.integers(0, 1000), st.integers(1, 12), st.sampled_from([0.01, 0.05, 0.3]), st.sampled_from([0.0, 5000.0]))
def test_corner_picking_agrees(seed, max_corners, quality, min_score):
    f = smooth_field(np.random.default_rng(seed), 40, 40, 1.5)
    score, is_max = corner_maps(f)
    a = NB["pick_corners"](score, is_max, 4, 6, 30, 28, max_corners, quality, min_score, 2.0)
    b = NP["pick_corners"](score, is_max, 4, 6, 30, 28, max_corners, quality, min_score, 2.0)
    assert _same(a, b)
    origins = np.array([[x, y] for y in range(0, 28, 3) for x in range(0, 28, 3)], dtype=np.int64)
    assert _same(NB["count_corners_batch"](score, is_max, origins, 12, max_corners, quality, min_score, 2.0),
                 NP["count_corners_batch"](score, is_max, origins, 12, max_corners, quality, min_score, 2.0))


@pytest.fixture(scope="module")
def small_context():
    scene = generate_tiled_texture("noise_patch", Rect(0, 0, 48, 60), (72, 60), 3.0, 4)
    seed = SeedSpec.from_region(scene.seed_hint)
    cfg = DetectorConfig()
    return scene, seed, SearchContext(scene.image, seed, cfg)


def test_tracking_agrees(small_context):
    _, _, ctx = small_context
    _, fs = ctx.features(0, 0)
    prm = ctx.params
    for shift in (0.0, 1.5, 3.0, 12.0):
        guess = np.ascontiguousarray(fs.pts + shift)
        a = NB["track_points"](ctx.pyramid, fs.T, fs.GX, fs.GY, fs.GINV, fs.OK, guess, prm.radius, prm.max_iter,
                               prm.eps)
        b = NP["track_points"](ctx.pyramid, fs.T, fs.GX, fs.GY, fs.GINV, fs.OK, guess, prm.radius, prm.max_iter,
                               prm.eps)
        assert _same(a, b)


def test_cell_matching_agrees(small_context):
    scene, seed, ctx = small_context
    grid = enumerate_candidates(scene.image, 12, 3)
    origins = np.ascontiguousarray(grid.origins().reshape(-1, 2), dtype=np.int64)
    pairs = [(t, x) for t in range(len(seed.templates)) for x in (0, 1, 2, 40, 200)]
    feats = _stack_features(ctx, pairs)
    prm = ctx.params
    out = []
    for k in (NB, NP):
        assigned = np.full(len(origins), -1, dtype=np.int64)
        attempts = np.zeros(len(origins), dtype=np.int64)
        k["match_cells"](ctx.pyramid, *feats, origins, assigned, attempts, 0, 12, prm.radius, prm.max_iter,
                         prm.eps, prm.residual_threshold, prm.unmatched_threshold, prm.min_corners,
                         prm.bounds_margin)
        out.append((assigned, attempts))
    assert _same(out[0], out[1])
    assert (out[0][0] >= 0).any() and (out[0][0] < 0).any()


_CHILD = """
import json
from texseg import _accel
from texseg.detector import DetectorConfig, SeedSpec, detect
from texseg.raster import Rect
from texseg.synth import generate_tiled_texture
s = generate_tiled_texture("checker", Rect(0, 0, 36, 48), (60, 48), 3.0, 1)
g = detect(s.image, SeedSpec.from_region(s.seed_hint), DetectorConfig(rotation_step=30.0, bend_strengths=(0.08,)))
print(json.dumps({"backend": _accel.BACKEND, "state": g.state.tolist(), "round": g.round.tolist(),
                  "transform": g.transform.tolist()}))
"""


def test_environment_flag_selects_numpy_with_same_labels():
    runs = {}
    for flag in ("", "1"):
        env = dict(os.environ, TEXSEG_DISABLE_NUMBA=flag)
        r = subprocess.run([sys.executable, "-c", _CHILD], capture_output=True, text=True, env=env, check=True)
        runs[flag] = json.loads(r.stdout)
    assert runs[""]["backend"] == "numba" and runs["1"]["backend"] == "numpy"
    for key in ("state", "round", "transform"):
        assert runs[""][key] == runs["1"][key]
