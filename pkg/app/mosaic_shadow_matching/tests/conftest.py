import math

import pytest

from config import get_settings
from geometry import Box, PolyRegion, region_union_all
from harness import generate_canyon
from mosaic import Aoi
from shadows import ShadowRegion


def hexagon(cx, cy, r):
    return [(cx + r * math.cos(math.radians(a)), cy + r * math.sin(math.radians(a))) for a in range(0, 360, 60)]


@pytest.fixture(autouse=True)
def fresh_settings(monkeypatch):
    for name in ("MZSM_EPS_AREA", "MZSM_ORACLE_CAP", "MZSM_DEBUG", "MZSM_TIMING_REPETITIONS", "MZSM_GMM_SAMPLES", "MZSM_DEFAULT_PRIOR"):
        monkeypatch.delenv(name, raising=False)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def illustrative():
    """60 m square AOI with three hexagonal shadows.

    S3 covers S1 entirely, splits the open-ground leaf and misses S2.
    """
    box = Box(0.0, 0.0, 60.0, 60.0)
    aoi = Aoi(region=box.to_region(), box=box)
    shadows = [
        ShadowRegion("S1", PolyRegion.polygon(hexagon(12.0, 12.0, 8.0))),
        ShadowRegion("S2", PolyRegion.polygon(hexagon(48.0, 48.0, 8.0))),
        ShadowRegion("S3", PolyRegion.polygon([(-10, 12), (0, -4), (35, -4), (45, 12), (35, 28), (0, 28)])),
    ]
    return aoi, shadows


def bit_cells(missing):
    """Sixteen unit cells along x, cell b = [b, b+1] x [0, 1].

    Shadow j covers the cells whose index has bit j set, so every labelling
    of four shadows owns exactly one cell. The AOI drops cell ``missing``.
    """
    cells = [PolyRegion.box(b, 0, b + 1, 1) for b in range(16)]
    region = region_union_all(c for b, c in enumerate(cells) if b != missing)
    aoi = Aoi(region=region, box=Box(0.0, 0.0, 16.0, 1.0))
    shadows = [
        ShadowRegion(f"S{j}", region_union_all(c for b, c in enumerate(cells) if b >> j & 1))
        for j in range(4)
    ]
    return aoi, shadows


@pytest.fixture
def canyon():
    return generate_canyon(n_satellites=4, seed=3)
