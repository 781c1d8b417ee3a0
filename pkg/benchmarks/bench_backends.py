"""Time the numba kernels against their numpy twins on the tiled scene.

    python benchmarks/bench_backends.py [--repeats 5]

Each kernel runs on identical inputs under both backends; the script checks
that the outputs agree and prints a small table of median times.
"""
from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from texseg import kernels
from texseg.detector import DetectorConfig, SearchContext, SeedSpec, _stack_features, enumerate_candidates
from texseg.klt import corner_maps
from texseg.raster import Rect
from texseg.synth import generate_tiled_texture
from texseg.warp import TransformSpec, homography_from_spec


def _median_ms(fn, repeats):
    fn()  # warm-up (numba compiles here)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1000.0)
    return statistics.median(times)


def build_cases():
    scene = generate_tiled_texture("checker", Rect(0, 0, 128, 256), (256, 256), 3.0, 1)
    seed = SeedSpec.from_region(scene.seed_hint)
    cfg = DetectorConfig()
    ctx = SearchContext(scene.image, seed, cfg)
    grid = enumerate_candidates(scene.image, cfg.block_size, cfg.stride)
    origins = np.ascontiguousarray(grid.origins().reshape(-1, 2), dtype=np.int64)
    prm = ctx.params
    pairs = [(t, x) for t in range(len(seed.templates)) for x in range(3, 3 + 48 // len(seed.templates))]
    feats = _stack_features(ctx, pairs)
    score, is_max = corner_maps(ctx.gray)
    hinv = np.linalg.inv(homography_from_spec(TransformSpec("rotation_scale", 15, 1.2), 36))
    patch = np.ascontiguousarray(ctx.gray[:36, :36])
    _, fs = ctx.features(0, 0)
    guess = np.ascontiguousarray(fs.pts + 3.0)

    def match_cells(k):
        assigned = np.full(len(origins), -1, dtype=np.int64)
        attempts = np.zeros(len(origins), dtype=np.int64)
        k["match_cells"](ctx.pyramid, *feats, origins, assigned, attempts, 0, cfg.block_size, prm.radius,
                         prm.max_iter, prm.eps, prm.residual_threshold, prm.unmatched_threshold,
                         prm.min_corners, prm.bounds_margin)
        return assigned, attempts

    cases = {
        "warp_bilinear": lambda k: k["warp_bilinear"](patch, hinv, 36, 36),
        "pick_corners": lambda k: k["pick_corners"](score, is_max, 0, 0, 256, 256, 10, 0.05, 5000.0, 2.0),
        "count_corners_batch": lambda k: k["count_corners_batch"](score, is_max, origins, 12, 10, 0.05,
                                                                  5000.0, 2.0),
        "track_points": lambda k: k["track_points"](ctx.pyramid, fs.T, fs.GX, fs.GY, fs.GINV, fs.OK, guess,
                                                    prm.radius, prm.max_iter, prm.eps),
        f"match_cells ({len(origins)} cells x {len(pairs)} pairs)": match_cells,
    }
    return cases


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    a, b = np.asarray(a), np.asarray(b)
    if a.dtype.kind == "f":
        return a.shape == b.shape and np.allclose(a, b, atol=1e-6, equal_nan=True)
    return np.array_equal(a, b)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)
    print(f"{'kernel':48s} {'numba ms':>10s} {'numpy ms':>10s} {'ratio':>8s}  agree")
    for name, case in build_cases().items():
        nb = _median_ms(lambda: case(kernels.NUMBA_KERNELS), args.repeats)
        npy = _median_ms(lambda: case(kernels.NUMPY_KERNELS), max(1, args.repeats // 2))
        agree = _same(case(kernels.NUMBA_KERNELS), case(kernels.NUMPY_KERNELS))
        print(f"{name:48s} {nb:10.2f} {npy:10.2f} {npy / max(nb, 1e-9):8.1f}  {agree}")


if __name__ == "__main__":
    main()
