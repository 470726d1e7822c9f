import math

import pytest
from pydantic import ValidationError

from errors import InvalidGeometry
from geometry import PolyRegion, region_contains, region_difference, region_equal
from shadows import (
    Building,
    Satellite,
    ShadowRegion,
    Visibility,
    building_shadow,
    designations,
    scene_shadow,
    scene_shadows,
    shadow_offset,
    truth_designation,
)


@pytest.fixture
def block():
    return Building.from_vertices("B1", [(0, 0), (10, 0), (10, 10), (0, 10)], 10.0)


def test_shadow_of_square_block_at_45_degrees(block):
    # Signal from the north (+y): the shadow stretches 10 m south
    shadow = building_shadow(block, Satellite(id="G01", elevation=45, azimuth=0))
    assert shadow.area == pytest.approx(200.0)
    assert shadow.bounds == pytest.approx((0, -10, 10, 10))


def test_shadow_direction_follows_azimuth(block):
    # Signal from the east (+x): the shadow stretches west
    shadow = building_shadow(block, Satellite(id="G01", elevation=45, azimuth=90))
    assert shadow.bounds == pytest.approx((-10, 0, 10, 10))


def test_zenith_satellite_shadow_is_footprint(block):
    shadow = building_shadow(block, Satellite(id="G01", elevation=90, azimuth=123))
    assert region_equal(shadow, block.footprint)


def test_diagonal_shadow_area_matches_minkowski_sweep(block):
    sat = Satellite(id="G01", elevation=30, azimuth=45)
    dx, dy = shadow_offset(block.height, sat)
    # Sweep of a 10 m square along (dx, dy): area = 100 + 10|dx| + 10|dy|
    expected = 100 + 10 * abs(dx) + 10 * abs(dy)
    assert building_shadow(block, sat).area == pytest.approx(expected)


def test_shadow_length_grows_as_elevation_drops(block):
    low = building_shadow(block, Satellite(id="G01", elevation=15, azimuth=0)).area
    high = building_shadow(block, Satellite(id="G01", elevation=60, azimuth=0)).area
    assert low > high
    assert low == pytest.approx(100 + 10 * 10 / math.tan(math.radians(15)))


def test_concave_footprint_shadow_contains_footprint():
    ell = Building.from_vertices("L", [(0, 0), (10, 0), (10, 3), (3, 3), (3, 10), (0, 10)], 20.0)
    shadow = building_shadow(ell, Satellite(id="G02", elevation=40, azimuth=200))
    assert region_difference(ell.footprint, shadow).is_empty()
    assert shadow.num_faces == 1


@pytest.mark.parametrize("elevation,azimuth", [(0, 10), (-5, 10), (91, 10), (45, 360), (45, -1)])
def test_invalid_satellite_directions_are_rejected(elevation, azimuth):
    with pytest.raises(ValidationError):
        Satellite(id="G01", elevation=elevation, azimuth=azimuth)


def test_building_needs_positive_height():
    with pytest.raises(InvalidGeometry):
        Building.from_vertices("B", [(0, 0), (1, 0), (1, 1)], 0.0)


def test_building_footprint_must_be_simple():
    with pytest.raises(InvalidGeometry):
        Building.from_vertices("B", [(0, 0), (2, 2), (2, 0), (0, 2)], 5.0)


def test_scene_shadow_unions_buildings():
    left = Building.from_vertices("W", [(-20, 0), (-10, 0), (-10, 10), (-20, 10)], 10.0)
    right = Building.from_vertices("E", [(10, 0), (20, 0), (20, 10), (10, 10)], 10.0)
    shadow = scene_shadow([left, right], Satellite(id="G03", elevation=45, azimuth=0))
    assert shadow.satellite_id == "G03"
    assert shadow.region.num_faces == 2
    assert shadow.region.area == pytest.approx(400.0)


def test_scene_shadows_keep_satellite_order(block):
    sats = [Satellite(id=f"G{i}", elevation=45, azimuth=90 * i) for i in range(4)]
    assert [s.satellite_id for s in scene_shadows([block], sats)] == ["G0", "G1", "G2", "G3"]


def test_scene_shadow_needs_buildings():
    with pytest.raises(ValueError):
        scene_shadow([], Satellite(id="G01", elevation=45, azimuth=0))


def test_truth_designation_is_closed_on_boundary():
    shadow = ShadowRegion("G01", PolyRegion.box(0, 0, 10, 10))
    assert truth_designation((10, 5), shadow) is Visibility.NLOS
    assert truth_designation((5, 5), shadow) is Visibility.NLOS
    assert truth_designation((11, 5), shadow) is Visibility.LOS


def test_empty_shadow_is_always_los():
    assert truth_designation((0, 0), ShadowRegion("G01", PolyRegion.empty())) is Visibility.LOS


def test_designations_per_satellite(block):
    shadows = scene_shadows([block], [
        Satellite(id="N", elevation=45, azimuth=0),
        Satellite(id="S", elevation=45, azimuth=180),
    ])
    # South of the block: hidden from the north satellite only
    assert designations((5, -5), shadows) == [Visibility.NLOS, Visibility.LOS]
    assert region_contains(shadows[1].region, (5, 15))
