"""Command-line entry point: ``texseg <command> ...``.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 processing error.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
import time
from dataclasses import replace

import numpy as np

from . import __version__
from .detector import DetectorConfig, SeedSpec, detect, label_dump_lines
from .errors import ImageIOError, TexsegError
from .klt import TrackerParams
from .raster import Rect, load_image, save_image, to_gray
from .refine import (ALPHA_THRESHOLD, CANNY_HIGH, CANNY_LOW, CANNY_SIGMA, SMOOTH_SIGMA, TAU_THRESHOLD,
                     refine)
from .synth import (BACKGROUNDS, TILE_KINDS, bench_csv, benchmark, generate_tiled_texture, iou,
                    paste_warped_copy, sweep_block_size, sweep_csv, sweep_gnuplot)
from .warp import TransformSpec

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_PROCESSING = 0, 1, 2, 3

METHOD = "method constant"
D = DetectorConfig()
T = TrackerParams()


class UsageError(TexsegError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _rect(text: str) -> Rect:
    try:
        return Rect.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected x,y,w,h, got {text!r}") from exc


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from exc
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError(f"canvas must be positive, got {text!r}")
    return w, h


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _paste(text: str) -> tuple[TransformSpec, Rect]:
    try:
        spec_text, rect_text = text.rsplit("@", 1)
        spec = TransformSpec.from_text(spec_text)
        spec.validate()
        return spec, Rect.parse(rect_text)
    except (ValueError, TexsegError) as exc:
        raise argparse.ArgumentTypeError(f"expected 'SPEC@x,y,w,h', got {text!r}: {exc}") from exc


def _positive(kind):
    def conv(text):
        v = kind(text)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v
    return conv


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threads", type=_positive(int), default=1, help="detector worker threads")
    p.add_argument("--quiet", action="store_true", help="no progress on standard error")


def _add_input(p: argparse.ArgumentParser) -> None:
    p.add_argument("-i", "--input", required=True, help="input image (PNG/PPM/PGM)")
    p.add_argument("--seed", type=_rect, required=True,
                   help="seed rectangle x,y,w,h; w and h must be multiples of the block size")


def _add_detector(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("detector")
    g.add_argument("--stride", type=_positive(int), default=D.stride, help=f"lattice stride in px ({METHOD})")
    g.add_argument("--block-size", type=_positive(int), default=D.block_size, help=f"template side in px ({METHOD})")
    g.add_argument("--rotation-step", type=_positive(float), default=D.rotation_step,
                   help=f"rotation step in degrees ({METHOD})")
    g.add_argument("--scale-min", type=_positive(float), default=D.scale_min, help=f"smallest scale ({METHOD})")
    g.add_argument("--scale-max", type=_positive(float), default=D.scale_max, help=f"largest scale ({METHOD})")
    g.add_argument("--scale-step", type=_positive(float), default=D.scale_step, help="scale sampling step")
    g.add_argument("--unmatched", type=float, default=D.unmatched_threshold,
                   help=f"largest unmatched-corner fraction for a match ({METHOD})")
    g.add_argument("--hist-threshold", type=float, default=D.hist_threshold,
                   help="largest L1 HSV histogram distance to any template")
    g.add_argument("--corner-gap", type=float, default=D.corner_gap,
                   help="largest relative corner-count gap to any template")
    g.add_argument("--bends", default=",".join(f"{b:g}" for b in D.bend_strengths),
                   help="perspective bend strengths, comma-separated")
    g.add_argument("--fill-min", type=int, default=D.neighbor_fill_min,
                   help="labelled 8-neighbours that label a cell by default")
    g.add_argument("--config", action="append", default=[], metavar="KEY=VALUE",
                   help="override any detector or tracker field, e.g. tracker.window=9 (repeatable)")


def _add_refine(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("mask refinement")
    g.add_argument("--alpha", type=float, default=ALPHA_THRESHOLD,
                   help=f"spurious-label density threshold over the 9x9 lattice window ({METHOD})")
    g.add_argument("--tau", type=float, default=TAU_THRESHOLD, help="edge-energy jump threshold")
    g.add_argument("--canny-sigma", type=_positive(float), default=CANNY_SIGMA, help="Canny blur sigma")
    g.add_argument("--canny-low", type=float, default=CANNY_LOW, help="Canny low threshold (Sobel magnitude)")
    g.add_argument("--canny-high", type=float, default=CANNY_HIGH, help="Canny high threshold (Sobel magnitude)")
    g.add_argument("--smooth-sigma", type=_positive(float), default=SMOOTH_SIGMA, help="mask low-pass sigma")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="texseg", description="Seed-driven texture region segmentation.", formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"texseg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("segment", help="detect and write the final mask", formatter_class=fmt)
    _add_input(p)
    p.add_argument("-o", "--output", required=True, help="mask path (PNG or PGM)")
    p.add_argument("--debug", metavar="PATH", help="also write the label dump here")
    _add_detector(p)
    _add_refine(p)
    _add_common(p)

    p = sub.add_parser("detect", help="write the label dump only", formatter_class=fmt)
    _add_input(p)
    p.add_argument("-o", "--output", help="dump path (default: standard output)")
    _add_detector(p)
    _add_common(p)

    p = sub.add_parser("synth", help="generate a synthetic scene with ground truth", formatter_class=fmt)
    p.add_argument("--tile", choices=TILE_KINDS, default="checker")
    p.add_argument("--canvas", type=_size, default=(256, 256), help="WxH")
    p.add_argument("--region", type=_rect, default=Rect(0, 0, 128, 256), help="textured region x,y,w,h")
    p.add_argument("--noise", type=float, default=3.0, help="Gaussian pixel noise sigma")
    p.add_argument("--rng-seed", type=int, default=1)
    p.add_argument("--background", choices=BACKGROUNDS, default="solid")
    p.add_argument("--paste", type=_paste, action="append", default=[], metavar="SPEC@x,y,w,h",
                   help="paste a warped copy, e.g. 'rot=15 scale=1.2@132,12,96,96' (repeatable)")
    p.add_argument("--block-paste", type=_paste, action="append", default=[], metavar="SPEC@x,y,w,h",
                   help="like --paste but warps every 12x12 tile separately (repeatable)")
    p.add_argument("-o", "--output", required=True, help="scene image path")
    p.add_argument("--truth", help="ground-truth mask path")

    p = sub.add_parser("eval", help="IoU of a mask against ground truth", formatter_class=fmt)
    p.add_argument("--mask", required=True)
    p.add_argument("--truth", required=True)

    p = sub.add_parser("sweep", help="selected blocks per round across block sizes", formatter_class=fmt)
    _add_input(p)
    p.add_argument("--sizes", type=_int_list, default=[12, 18, 24], help="block sizes, comma-separated")
    p.add_argument("--templates", type=_positive(int), default=6, help=f"templates per run ({METHOD})")
    p.add_argument("-o", "--output", help="CSV path (default: standard output)")
    p.add_argument("--gnuplot", metavar="PATH", help="also write a whitespace-separated data file")
    _add_detector(p)
    _add_common(p)

    p = sub.add_parser("bench", help="wall-clock and speedup per thread count", formatter_class=fmt)
    _add_input(p)
    p.add_argument("--thread-counts", type=_int_list, default=[1, 2, 4, 8], help="comma-separated")
    p.add_argument("--repeats", type=_positive(int), default=3, help="runs per thread count (median)")
    p.add_argument("-o", "--output", help="CSV path (default: standard output)")
    _add_detector(p)
    p.add_argument("--quiet", action="store_true", help="no progress on standard error")
    return parser


def _coerce(text: str, like):
    if isinstance(like, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    if isinstance(like, tuple):
        return tuple(float(v) for v in text.split(",") if v.strip())
    return text


def apply_overrides(cfg: DetectorConfig, items: list[str]) -> DetectorConfig:
    """Apply ``key=value`` overrides; ``tracker.<field>`` reaches the tracker."""
    fields = {f.name for f in dataclasses.fields(DetectorConfig)} - {"tracker"}
    tfields = {f.name for f in dataclasses.fields(TrackerParams)}
    tracker = cfg.tracker
    for item in items:
        if "=" not in item:
            raise UsageError(f"--config expects KEY=VALUE, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        try:
            if key.startswith("tracker."):
                name = key[len("tracker."):]
                if name not in tfields:
                    raise UsageError(f"--config: unknown tracker field {name!r}")
                tracker = replace(tracker, **{name: _coerce(value, getattr(tracker, name))})
            elif key in fields:
                cfg = replace(cfg, **{key: _coerce(value, getattr(cfg, key))})
            else:
                raise UsageError(f"--config: unknown field {key!r}")
        except ValueError as exc:
            raise UsageError(f"--config {item}: {exc}") from exc
    return replace(cfg, tracker=tracker)


def detector_config(args) -> DetectorConfig:
    if args.scale_min > args.scale_max:
        raise UsageError(f"--scale-min {args.scale_min:g} exceeds --scale-max {args.scale_max:g}")
    if not 0.0 < args.unmatched < 1.0:
        raise UsageError(f"--unmatched must lie in (0, 1), got {args.unmatched:g}")
    if args.block_size % 3:
        raise UsageError(f"--block-size must be divisible by 3, got {args.block_size}")
    try:
        bends = tuple(float(v) for v in args.bends.split(",") if v.strip())
        cfg = DetectorConfig(stride=args.stride, block_size=args.block_size,
                             unmatched_threshold=args.unmatched, hist_threshold=args.hist_threshold,
                             corner_gap=args.corner_gap, rotation_step=args.rotation_step,
                             scale_min=args.scale_min, scale_max=args.scale_max, scale_step=args.scale_step,
                             bend_strengths=bends, neighbor_fill_min=args.fill_min,
                             thread_count=getattr(args, "threads", 1))
        cfg = apply_overrides(cfg, args.config)
        cfg.bank()
    except (ValueError, TexsegError) as exc:
        if isinstance(exc, UsageError):
            raise
        raise UsageError(str(exc)) from exc
    return cfg


def seed_spec(args, img: np.ndarray, s: int) -> SeedSpec:
    r = args.seed
    if r.w < s or r.h < s or r.w % s or r.h % s:
        raise UsageError(f"--seed {r}: width and height must be positive multiples of the block size {s}")
    height, width = img.shape[:2]
    if not r.inside(width, height):
        raise UsageError(f"--seed {r} lies outside the {width}x{height} image")
    return SeedSpec.from_region(r, s)


def _reporter(quiet: bool):
    if quiet:
        return None

    def report(stage, done, total):
        end = "\n" if done >= total else ""
        print(f"\r{stage}: {done}/{total} pairs", end=end, file=sys.stderr, flush=True)
    return report


def _write_text(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise ImageIOError(f"cannot write {path}: {exc}") from exc


def _cells_line(grid, elapsed) -> str:
    c = grid.counts()
    return (f"labeled {c['labeled']} of {grid.grid_w * grid.grid_h} cells "
            f"(round0 {c['round0']}, round1 {c['round1']}, round2 {c['round2']}, round3 {c['round3']}, "
            f"default {c['default']}) in {elapsed:.2f} s")


def cmd_segment(args) -> int:
    cfg = detector_config(args)
    if not 0 < args.canny_low < args.canny_high:
        raise UsageError(f"--canny-low {args.canny_low:g} must be positive and below --canny-high {args.canny_high:g}")
    img = load_image(args.input)
    seed = seed_spec(args, img, cfg.block_size)
    t0 = time.perf_counter()
    grid = detect(img, seed, cfg, _reporter(args.quiet))
    if args.debug:
        _write_text(args.debug, "\n".join(label_dump_lines(img, seed, grid, cfg)) + "\n")
    _, mask = refine(grid, to_gray(img), args.alpha, args.tau, args.canny_sigma, args.canny_low,
                     args.canny_high, args.smooth_sigma)
    save_image(mask, args.output)
    print(_cells_line(grid, time.perf_counter() - t0))
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = detector_config(args)
    img = load_image(args.input)
    seed = seed_spec(args, img, cfg.block_size)
    grid = detect(img, seed, cfg, _reporter(args.quiet))
    lines = label_dump_lines(img, seed, grid, cfg)
    _write_text(args.output, "".join(line + "\n" for line in lines))
    return EXIT_OK


def cmd_synth(args) -> int:
    width, height = args.canvas
    scene = generate_tiled_texture(args.tile, args.region, (width, height), args.noise, args.rng_seed,
                                   args.background)
    for spec, dst in args.paste:
        scene = paste_warped_copy(scene, spec, dst)
    for spec, dst in args.block_paste:
        scene = paste_warped_copy(scene, spec, dst, per_block=True)
    save_image(scene.image, args.output)
    if args.truth:
        save_image(scene.truth, args.truth)
    print(f"seed {scene.seed_hint}")
    return EXIT_OK


def _load_mask(path: str) -> np.ndarray:
    m = load_image(path, promote=False)
    return m[..., 0] if m.ndim == 3 else m


def cmd_eval(args) -> int:
    a, b = _load_mask(args.mask), _load_mask(args.truth)
    print(f"iou {iou(a, b):.6f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = detector_config(args)
    img = load_image(args.input)
    for s in args.sizes:
        if s % 3:
            raise UsageError(f"--sizes: {s} is not divisible by 3")
    points = sweep_block_size(img, args.seed, args.sizes, cfg, args.templates)
    _write_text(args.output, sweep_csv(points))
    if args.gnuplot:
        _write_text(args.gnuplot, sweep_gnuplot(points))
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = detector_config(args)
    img = load_image(args.input)
    seed = seed_spec(args, img, cfg.block_size)
    rows = benchmark(img, seed, cfg, args.thread_counts, args.repeats)
    _write_text(args.output, bench_csv(rows))
    if not args.quiet:
        for r in rows:
            print(f"threads {r.threads}: {r.ms:.1f} ms, speedup {r.speedup:.2f}", file=sys.stderr)
    return EXIT_OK


COMMANDS = {"segment": cmd_segment, "detect": cmd_detect, "synth": cmd_synth, "eval": cmd_eval,
            "sweep": cmd_sweep, "bench": cmd_bench}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"texseg: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ImageIOError, OSError) as exc:
        print(f"texseg: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TexsegError, ValueError) as exc:
        print(f"texseg: error: {exc}", file=sys.stderr)
        return EXIT_PROCESSING


if __name__ == "__main__":
    sys.exit(main())
