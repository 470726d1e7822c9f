"""
GNSS shadows of extruded-prism buildings on a flat ground plane.

A building blocks a satellite wherever the ray from a ground point toward the
satellite passes through the prism. On flat ground that region is the
footprint swept along the horizontal shadow direction by
``height / tan(elevation)`` meters: the Minkowski sum of the footprint and a
segment. It is built as the footprint united with one parallelogram per
footprint edge, which stays correct for non-convex footprints.

Azimuth is measured clockwise from +y (along-street, "north") toward +x
(cross-street, "east"); the shadow extends away from the satellite, along
``-(sin az, cos az)``.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Sequence

import shapely
from pydantic import BaseModel, ConfigDict, Field
from shapely.geometry import Polygon

from errors import InvalidGeometry
from geometry import Coordinate, PolyRegion, region_contains, region_union_all

logger = logging.getLogger(__name__)


class Visibility(str, Enum):
    LOS = "LOS"
    NLOS = "NLOS"


class Satellite(BaseModel):
    """
    A GNSS satellite seen from the street as a direction.

    Attributes:
        id (str): Label such as "G05".
        elevation (float): Degrees above the horizon, in (0, 90].
        azimuth (float): Degrees clockwise from +y, in [0, 360).
    """
    model_config = ConfigDict(frozen=True)

    id: str = Field(min_length=1)
    elevation: float = Field(gt=0, le=90)
    azimuth: float = Field(ge=0, lt=360)


@dataclass(frozen=True)
class Building:
    """
    A flat-roofed building: a single-face footprint extruded to ``height``.

    Raises:
        InvalidGeometry: If the footprint has holes, several faces or no area,
            or the height is not a positive finite number.
    """
    id: str
    footprint: PolyRegion
    height: float

    def __post_init__(self):
        if self.footprint.num_faces != 1:
            raise InvalidGeometry(f"Building {self.id}: footprint must be one face, got {self.footprint.num_faces}")
        if len(self.footprint.geom.geoms[0].interiors):
            raise InvalidGeometry(f"Building {self.id}: footprint must not have holes")
        if not (math.isfinite(self.height) and self.height > 0):
            raise InvalidGeometry(f"Building {self.id}: height must be positive, got {self.height}")

    @classmethod
    def from_vertices(cls, id: str, vertices: Sequence[Coordinate], height: float) -> "Building":
        return cls(id=id, footprint=PolyRegion.polygon(vertices), height=float(height))


@dataclass(frozen=True)
class ShadowRegion:
    """The ground region where one satellite is blocked; may be empty."""
    satellite_id: str
    region: PolyRegion


def shadow_offset(height: float, satellite: Satellite) -> tuple:
    """Horizontal displacement of the roof outline's shadow for ``satellite``."""
    if satellite.elevation >= 90:
        return 0.0, 0.0
    length = height / math.tan(math.radians(satellite.elevation))
    az = math.radians(satellite.azimuth)
    return -length * math.sin(az), -length * math.cos(az)


def building_shadow(building: Building, satellite: Satellite) -> PolyRegion:
    """
    Ground shadow of one building for one satellite.

    Args:
        building (Building): The prism casting the shadow.
        satellite (Satellite): Direction of the signal.

    Returns:
        PolyRegion: The footprint swept by ``t * v`` for ``t`` in [0, 1]. A
        zenith satellite returns the footprint itself.
    """
    dx, dy = shadow_offset(building.height, satellite)
    if dx == 0.0 and dy == 0.0:
        return building.footprint
    outline = building.footprint.geom.geoms[0].exterior.coords[:-1]
    pieces = [building.footprint.geom]
    for (x0, y0), (x1, y1) in zip(outline, outline[1:] + outline[:1]):
        quad = Polygon([(x0, y0), (x1, y1), (x1 + dx, y1 + dy), (x0 + dx, y0 + dy)])
        # Edges parallel to the shadow direction sweep nothing
        if quad.area > 0:
            pieces.append(quad)
    return PolyRegion.from_shapely(shapely.unary_union(pieces))


def scene_shadow(buildings: Sequence[Building], satellite: Satellite) -> ShadowRegion:
    """Union of every building's shadow for one satellite."""
    if not buildings:
        raise ValueError("scene_shadow needs at least one building")
    region = region_union_all(building_shadow(b, satellite) for b in buildings)
    logger.debug("Shadow for %s: %d faces, %.2f m²", satellite.id, region.num_faces, region.area)
    return ShadowRegion(satellite_id=satellite.id, region=region)


def scene_shadows(buildings: Sequence[Building], satellites: Sequence[Satellite]) -> List[ShadowRegion]:
    """One ShadowRegion per satellite, in the listed order."""
    return [scene_shadow(buildings, s) for s in satellites]


def truth_designation(p: Coordinate, shadow: ShadowRegion) -> Visibility:
    """NLOS when ``p`` lies in the (closed) shadow, else LOS."""
    return Visibility.NLOS if region_contains(shadow.region, p) else Visibility.LOS


def designations(p: Coordinate, shadows: Sequence[ShadowRegion]) -> List[Visibility]:
    return [truth_designation(p, s) for s in shadows]
