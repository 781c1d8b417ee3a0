import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from texseg.detector import DetectorConfig, SeedSpec, detect
from texseg.raster import Rect
from texseg.synth import generate_tiled_texture

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# acceptance outcomes, printed after the run: {criterion: (passed, detail)}
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def tiled_scene():
    """256x256 canvas, checker texture over the left 128 columns, noise sigma 3."""
    return generate_tiled_texture("checker", Rect(0, 0, 128, 256), (256, 256), 3.0, 1, "solid")


@pytest.fixture(scope="session")
def tiled_result(tiled_scene):
    seed = SeedSpec.from_region(tiled_scene.seed_hint)
    t0 = time.perf_counter()
    grid = detect(tiled_scene.image, seed, DetectorConfig())
    return seed, grid, time.perf_counter() - t0


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def smooth_field(rng, h=64, w=64, sigma=3.0):
    """Random blob field scaled to roughly 0..255."""
    from scipy import ndimage
    raw = rng.normal(size=(h, w))
    f = ndimage.gaussian_filter(raw, sigma, mode="wrap")
    f = (f - f.min()) / max(np.ptp(f), 1e-12)
    return 20.0 + 215.0 * f
