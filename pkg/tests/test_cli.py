import subprocess
import sys

import numpy as np
import pytest

from texseg.cli import EXIT_IO, EXIT_OK, EXIT_PROCESSING, EXIT_USAGE, apply_overrides, build_parser, main
from texseg.detector import DetectorConfig, parse_label_dump
from texseg.raster import Rect, load_image, save_image


@pytest.fixture(scope="module")
def scene_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    img, truth = d / "scene.png", d / "truth.png"
    code = main(["synth", "--tile", "checker", "--canvas", "96x72", "--region", "0,0,48,72",
                 "-o", str(img), "--truth", str(truth)])
    assert code == EXIT_OK
    return d, img, truth


def test_parse_segment_example():
    args = build_parser().parse_args(["segment", "-i", "in.png", "-o", "mask.png", "--seed", "10,10,36,36"])
    assert args.seed == Rect(10, 10, 36, 36) and args.stride == 3 and args.rotation_step == 5.0


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit) as e:
        build_parser().parse_args(["segment", "--help"])
    assert e.value.code == 0
    text = capsys.readouterr().out
    for flag in ("--stride", "--block-size", "--rotation-step", "--scale-min", "--scale-max", "--unmatched",
                 "--alpha"):
        assert flag in text
    assert "default: 3" in text and "default: 0.15" in text and "default: 0.05" in text


def test_synth_prints_seed(capsys, tmp_path):
    assert main(["synth", "--canvas", "48x48", "--region", "0,0,36,48", "-o", str(tmp_path / "a.png")]) == 0
    assert capsys.readouterr().out.strip() == "seed 0,12,36,36"


@pytest.mark.parametrize("argv", [
    ["segment", "-i", "x.png", "-o", "m.png"],
    ["segment", "-i", "x.png", "-o", "m.png", "--seed", "0,0,36,36", "--scale-min", "1.5", "--scale-max", "1.3"],
    ["segment", "-i", "x.png", "-o", "m.png", "--seed", "0,0,36"],
    ["segment", "-i", "x.png", "-o", "m.png", "--seed", "0,0,36,36", "--bogus"],
    ["segment", "-i", "x.png", "-o", "m.png", "--seed", "0,0,36,36", "--config", "nope=1"],
    ["bench", "-i", "x.png", "--seed", "0,0,36,36", "--threads", "0"],
])
def test_usage_errors(argv, capsys):
    assert main(argv) == EXIT_USAGE
    assert "usage error" in capsys.readouterr().err


def test_config_overrides():
    cfg = apply_overrides(DetectorConfig(), ["band_rows=2", "tracker.levels=1", "tracker.residual_threshold=9"])
    assert cfg.band_rows == 2 and cfg.tracker.levels == 1 and cfg.tracker.residual_threshold == 9.0


def test_missing_input_is_io_error(tmp_path, capsys):
    code = main(["segment", "-i", str(tmp_path / "none.png"), "-o", str(tmp_path / "m.png"),
                 "--seed", "0,0,36,36", "--quiet"])
    assert code == EXIT_IO


def test_seed_must_tile(scene_files):
    d, img, _ = scene_files
    code = main(["segment", "-i", str(img), "-o", str(d / "m.png"), "--seed", "0,12,30,36", "--quiet"])
    assert code == EXIT_USAGE


def test_eval_dimension_mismatch(tmp_path, capsys):
    save_image(np.zeros((10, 10), np.uint8), tmp_path / "a.png")
    save_image(np.zeros((10, 12), np.uint8), tmp_path / "b.png")
    assert main(["eval", "--mask", str(tmp_path / "a.png"), "--truth", str(tmp_path / "b.png")]) == EXIT_PROCESSING


def test_segment_writes_mask_and_is_repeatable(scene_files, capsys):
    d, img, truth = scene_files
    outs = []
    for k in range(2):
        out = d / f"mask{k}.png"
        dump = d / f"dump{k}.txt"
        code = main(["segment", "-i", str(img), "-o", str(out), "--seed", "0,12,36,36", "--quiet",
                     "--debug", str(dump), "--threads", str(1 + 2 * k)])
        assert code == EXIT_OK
        outs.append((out.read_bytes(), dump.read_bytes()))
    assert outs[0] == outs[1]
    assert "labeled" in capsys.readouterr().out
    mask = load_image(d / "mask0.png", promote=False)
    assert set(np.unique(mask)) <= {0, 255}
    rows = parse_label_dump((d / "dump0.txt").read_text().splitlines())
    assert rows and all(r["round"] in (None, 0, 1, 2, 3) for r in rows)
    assert main(["eval", "--mask", str(d / "mask0.png"), "--truth", str(truth)]) == EXIT_OK
    assert float(capsys.readouterr().out.split()[1]) > 0.9


def test_detect_dumps_to_stdout(scene_files, capsys):
    _, img, _ = scene_files
    assert main(["detect", "-i", str(img), "--seed", "0,12,36,36", "--quiet"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(len(line.split()) >= 6 for line in lines)


def test_sweep_and_bench(scene_files, capsys):
    d, img, _ = scene_files
    assert main(["sweep", "-i", str(img), "--seed", "0,12,36,24", "--sizes", "13", "--quiet"]) == EXIT_USAGE
    capsys.readouterr()
    assert main(["sweep", "-i", str(img), "--seed", "0,12,36,24", "--sizes", "12", "--quiet",
                 "-o", str(d / "s.csv"), "--gnuplot", str(d / "s.dat")]) == EXIT_OK
    assert (d / "s.csv").read_text().startswith("block_size,round1,round2,round3,default,total\n12,")
    assert main(["bench", "-i", str(img), "--seed", "0,12,36,36", "--thread-counts", "1", "--repeats", "1",
                 "--quiet"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("threads,ms,speedup\n1,")


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "texseg", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("texseg ")
