"""
2D polygon-region kernel.

PolyRegion is the single geometric carrier used everywhere else: areas of
interest, shadows, tree nodes, leaves, grid squares and confidence outlines.
It wraps a shapely MultiPolygon that is always normalized:

- faces are pairwise interior-disjoint,
- outer rings run counter-clockwise and holes clockwise,
- faces and holes with area <= eps_area are pruned, as are collinear vertices.

Regions are closed sets and equality is area based: two regions are equal when
their symmetric difference has (near) zero area. All functions are pure and
safe to call from several threads.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import shapely
from shapely.errors import GEOSException
from shapely.geometry import MultiPolygon, Polygon
from shapely.geometry.base import BaseGeometry
from shapely.geometry.polygon import orient

from config import get_settings
from errors import EmptyRegion, InvalidGeometry

logger = logging.getLogger(__name__)

# Snapping grid (m) used only when GEOS rejects an overlay at full precision
FALLBACK_GRID_SIZE = 1e-9


class Point2D(NamedTuple):
    """A ground-plane point in local meters (x cross-street, y along-street)."""
    x: float
    y: float


Coordinate = Union[Point2D, Tuple[float, float], Sequence[float]]
Triangle = Tuple[Point2D, Point2D, Point2D]


class RingOrientation(str, Enum):
    OUTER = "outer"
    HOLE = "hole"


class Ring(NamedTuple):
    """
    One boundary ring of a face.

    Vertices are stored open (the first vertex is not repeated); outer rings
    are counter-clockwise and holes clockwise.
    """
    vertices: Tuple[Point2D, ...]
    orientation: RingOrientation


def as_point(p: Coordinate) -> Point2D:
    """
    Coerce a coordinate pair to Point2D.

    Raises:
        InvalidGeometry: If the pair is not two finite numbers.
    """
    try:
        x, y = float(p[0]), float(p[1])
    except (TypeError, ValueError, IndexError) as e:
        raise InvalidGeometry(f"Not a coordinate pair: {p!r}") from e
    if not (math.isfinite(x) and math.isfinite(y)):
        raise InvalidGeometry(f"Non-finite coordinate: ({x}, {y})")
    return Point2D(x, y)


def _check_ring(vertices: Sequence[Coordinate]) -> List[Point2D]:
    points = [as_point(v) for v in vertices]
    if len(points) > 1 and points[0] == points[-1]:
        points = points[:-1]
    if len(set(points)) < 3:
        raise InvalidGeometry(f"A ring needs at least 3 distinct vertices, got {len(set(points))}")
    return points


def _polygons(geom: BaseGeometry) -> Iterable[Polygon]:
    """Yield the polygonal parts of any geometry, dropping lines and points."""
    if geom is None or geom.is_empty:
        return
    if isinstance(geom, Polygon):
        yield geom
    elif hasattr(geom, "geoms"):
        for part in geom.geoms:
            yield from _polygons(part)


def _normalize(geom: BaseGeometry, eps: float) -> MultiPolygon:
    faces = []
    for poly in _polygons(geom):
        if poly.area <= eps:
            continue
        holes = [ring for ring in poly.interiors if Polygon(ring).area > eps]
        face = Polygon(poly.exterior, holes).simplify(0)
        if face.is_empty or face.area <= eps:
            continue
        for part in _polygons(face):
            faces.append(orient(part, sign=1.0))
    return MultiPolygon(faces)


class PolyRegion:
    """
    A possibly-disjoint set of polygons with holes.

    Build regions with the class constructors (``polygon``, ``box``,
    ``from_faces``, ``from_shapely``, ``empty``); they validate their input.
    Instances are immutable.
    """
    __slots__ = ("_geom",)

    def __init__(self, geom: Optional[MultiPolygon] = None):
        # Trusted path: callers must pass an already-normalized MultiPolygon
        self._geom = geom if geom is not None else MultiPolygon()

    # -- constructors -------------------------------------------------

    @classmethod
    def empty(cls) -> "PolyRegion":
        return cls()

    @classmethod
    def polygon(cls, vertices: Sequence[Coordinate], holes: Sequence[Sequence[Coordinate]] = ()) -> "PolyRegion":
        """
        A single face from an outer ring and optional holes.

        Raises:
            InvalidGeometry: If a ring is degenerate or self-intersecting, or a
                hole is not strictly inside the outer ring.
        """
        return cls.from_faces([(vertices, holes)])

    @classmethod
    def box(cls, xmin: float, ymin: float, xmax: float, ymax: float) -> "PolyRegion":
        return cls.polygon([(xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)])

    @classmethod
    def from_faces(cls, faces: Sequence[Tuple[Sequence[Coordinate], Sequence[Sequence[Coordinate]]]]) -> "PolyRegion":
        """
        Build a region from ``(outer, holes)`` pairs.

        Faces may share edges (they are merged) but must not overlap.

        Raises:
            InvalidGeometry: On any ring or face-overlap violation.
        """
        eps = get_settings().eps_area
        polys = []
        for outer, holes in faces:
            poly = Polygon(_check_ring(outer), [_check_ring(h) for h in holes])
            if not poly.is_valid:
                raise InvalidGeometry(f"Invalid face: {shapely.is_valid_reason(poly)}")
            polys.append(poly)
        for i in range(len(polys)):
            for j in range(i + 1, len(polys)):
                if polys[i].intersection(polys[j]).area > eps:
                    raise InvalidGeometry(f"Faces {i} and {j} overlap")
        return cls(_normalize(shapely.unary_union(polys), eps))

    @classmethod
    def from_shapely(cls, geom: BaseGeometry) -> "PolyRegion":
        """
        Wrap an arbitrary shapely geometry; non-polygonal parts are dropped.

        Raises:
            InvalidGeometry: If the geometry is not valid.
        """
        if geom is None:
            return cls()
        if not geom.is_valid:
            raise InvalidGeometry(f"Invalid geometry: {shapely.is_valid_reason(geom)}")
        return cls(_normalize(geom, get_settings().eps_area))

    # -- views --------------------------------------------------------

    @property
    def geom(self) -> MultiPolygon:
        """The underlying normalized MultiPolygon (do not mutate)."""
        return self._geom

    @property
    def area(self) -> float:
        return self._geom.area

    @property
    def bounds(self) -> Tuple[float, float, float, float]:
        return self._geom.bounds

    @property
    def faces(self) -> List["PolyRegion"]:
        return [PolyRegion(MultiPolygon([poly])) for poly in self._geom.geoms]

    @property
    def num_faces(self) -> int:
        return len(self._geom.geoms)

    def is_empty(self, eps: Optional[float] = None) -> bool:
        eps = get_settings().eps_area if eps is None else eps
        return self.area <= eps

    def rings(self) -> List[List[Ring]]:
        """Rings grouped per face: the outer ring first, then its holes."""
        grouped = []
        for poly in self._geom.geoms:
            face = [Ring(tuple(Point2D(*xy) for xy in poly.exterior.coords[:-1]), RingOrientation.OUTER)]
            for hole in poly.interiors:
                face.append(Ring(tuple(Point2D(*xy) for xy in hole.coords[:-1]), RingOrientation.HOLE))
            grouped.append(face)
        return grouped

    def __repr__(self) -> str:
        return f"PolyRegion(faces={self.num_faces}, area={self.area:.6g})"


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle in local meters."""
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        values = (self.xmin, self.ymin, self.xmax, self.ymax)
        if not all(math.isfinite(v) for v in values):
            raise InvalidGeometry(f"Non-finite box corner in {values}")
        if self.xmax <= self.xmin or self.ymax <= self.ymin:
            raise InvalidGeometry(f"Box must have positive area: {values}")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    def to_region(self) -> PolyRegion:
        return PolyRegion.box(self.xmin, self.ymin, self.xmax, self.ymax)

    def midpoint_grid(self, resolution: float) -> Tuple[np.ndarray, float]:
        """
        Cell centers of a regular grid evenly dividing the box.

        Each axis gets ``ceil(side / resolution)`` cells, so the actual cell
        side is at most ``resolution``.

        Returns:
            Tuple[np.ndarray, float]: ``(m, 2)`` centers and the cell area.
        """
        nx, ny, dx, dy = self._steps(resolution)
        xs = self.xmin + dx * (np.arange(nx) + 0.5)
        ys = self.ymin + dy * (np.arange(ny) + 0.5)
        gx, gy = np.meshgrid(xs, ys, indexing="xy")
        return np.column_stack([gx.ravel(), gy.ravel()]), dx * dy

    def grid_cells(self, resolution: float) -> np.ndarray:
        """Cell squares of :meth:`midpoint_grid` as a shapely polygon array, in the same order."""
        xy, _ = self.midpoint_grid(resolution)
        _, _, dx, dy = self._steps(resolution)
        return shapely.box(xy[:, 0] - dx / 2, xy[:, 1] - dy / 2, xy[:, 0] + dx / 2, xy[:, 1] + dy / 2)

    def _steps(self, resolution: float) -> Tuple[int, int, float, float]:
        if resolution <= 0:
            raise ValueError(f"resolution must be positive, got {resolution}")
        nx = max(1, math.ceil(self.width / resolution - 1e-9))
        ny = max(1, math.ceil(self.height / resolution - 1e-9))
        return nx, ny, self.width / nx, self.height / ny


# -- boolean operations ----------------------------------------------------


def _overlay(name: str, a: PolyRegion, b: PolyRegion) -> PolyRegion:
    settings = get_settings()
    op = getattr(shapely, name)
    try:
        result = op(a.geom, b.geom)
    except GEOSException as e:
        logger.warning("%s failed at full precision (%s); retrying on a %g m grid", name, e, FALLBACK_GRID_SIZE)
        result = op(a.geom, b.geom, grid_size=FALLBACK_GRID_SIZE)
    region = PolyRegion(_normalize(result, settings.eps_area))
    if settings.debug_validate and not region.geom.is_valid:
        raise InvalidGeometry(f"{name} produced an invalid region: {shapely.is_valid_reason(region.geom)}")
    return region


def region_intersection(a: PolyRegion, b: PolyRegion) -> PolyRegion:
    """
    Set intersection ``a ∩ b``.

    Args:
        a (PolyRegion): First operand.
        b (PolyRegion): Second operand.

    Returns:
        PolyRegion: The normalized intersection; empty when the operands only
        touch along edges or points.
    """
    if a.num_faces == 0 or b.num_faces == 0:
        return PolyRegion.empty()
    return _overlay("intersection", a, b)


def region_difference(a: PolyRegion, b: PolyRegion) -> PolyRegion:
    """
    Set difference ``a − b``.

    Returns:
        PolyRegion: What remains of ``a``; may gain holes or split into faces.
    """
    if a.num_faces == 0:
        return PolyRegion.empty()
    if b.num_faces == 0:
        return a
    return _overlay("difference", a, b)


def region_union(a: PolyRegion, b: PolyRegion) -> PolyRegion:
    """Set union ``a ∪ b``; edge-adjacent faces merge into one."""
    if b.num_faces == 0:
        return a
    if a.num_faces == 0:
        return b
    return _overlay("union", a, b)


def region_union_all(regions: Iterable[PolyRegion]) -> PolyRegion:
    """N-ary union of any number of regions."""
    geoms = [r.geom for r in regions if r.num_faces]
    if not geoms:
        return PolyRegion.empty()
    settings = get_settings()
    try:
        merged = shapely.unary_union(geoms)
    except GEOSException as e:
        logger.warning("unary_union failed at full precision (%s); retrying on a %g m grid", e, FALLBACK_GRID_SIZE)
        merged = shapely.unary_union(geoms, grid_size=FALLBACK_GRID_SIZE)
    return PolyRegion(_normalize(merged, settings.eps_area))


def region_area(a: PolyRegion) -> float:
    """Shoelace area of the outer rings minus the holes (m²)."""
    return a.area


def symmetric_difference_area(a: PolyRegion, b: PolyRegion) -> float:
    return region_difference(a, b).area + region_difference(b, a).area


def region_equal(a: PolyRegion, b: PolyRegion, tol: Optional[float] = None) -> bool:
    """Area-based equality: the symmetric difference is below ``tol`` (default eps_area)."""
    tol = get_settings().eps_area if tol is None else tol
    return symmetric_difference_area(a, b) < tol


def region_faces(a: PolyRegion) -> int:
    return a.num_faces


def region_contains(a: PolyRegion, p: Coordinate) -> bool:
    """Closed-set membership: boundary points count as inside."""
    p = as_point(p)
    return bool(shapely.intersects_xy(a.geom, p.x, p.y))


def contains_points(a: PolyRegion, xy: np.ndarray) -> np.ndarray:
    """
    Vectorized closed-set membership.

    Args:
        a (PolyRegion): Region to test against.
        xy (np.ndarray): ``(m, 2)`` array of points.

    Returns:
        np.ndarray: Boolean mask of length ``m``.
    """
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    if a.num_faces == 0 or len(xy) == 0:
        return np.zeros(len(xy), dtype=bool)
    xmin, ymin, xmax, ymax = a.bounds
    inside_box = (xy[:, 0] >= xmin) & (xy[:, 0] <= xmax) & (xy[:, 1] >= ymin) & (xy[:, 1] <= ymax)
    mask = np.zeros(len(xy), dtype=bool)
    if inside_box.any():
        candidates = xy[inside_box]
        mask[inside_box] = shapely.intersects_xy(a.geom, candidates[:, 0], candidates[:, 1])
    return mask


# -- triangulation and sampling --------------------------------------------


def triangle_array(a: PolyRegion) -> np.ndarray:
    """
    Triangles partitioning ``a`` as an ``(n, 3, 2)`` array.

    Uses a constrained Delaunay triangulation per face, so holes and
    non-convex boundaries are respected. Zero-area triangles are dropped.
    """
    chunks = []
    for poly in a.geom.geoms:
        triangles = shapely.get_parts(shapely.constrained_delaunay_triangles(poly))
        if len(triangles) == 0:
            continue
        coords = shapely.get_coordinates(triangles).reshape(-1, 4, 2)[:, :3, :]
        chunks.append(coords)
    if not chunks:
        return np.zeros((0, 3, 2))
    tris = np.concatenate(chunks)
    return tris[_triangle_areas(tris) > 0]


def _triangle_areas(tris: np.ndarray) -> np.ndarray:
    ab = tris[:, 1] - tris[:, 0]
    ac = tris[:, 2] - tris[:, 0]
    return 0.5 * np.abs(ab[:, 0] * ac[:, 1] - ab[:, 1] * ac[:, 0])


def triangulate(a: PolyRegion) -> List[Triangle]:
    """
    Partition a region into triangles.

    Returns:
        List[Triangle]: Triangles whose areas sum to ``region_area(a)``; empty
        for the empty region.
    """
    return [tuple(Point2D(float(x), float(y)) for x, y in tri) for tri in triangle_array(a)]


def sample_uniform(a: PolyRegion, n: int, seed: Union[int, np.random.Generator] = 0) -> np.ndarray:
    """
    Draw points uniformly from a region.

    A triangle is picked with probability proportional to its area, then a
    point is drawn inside it with the square-root barycentric rule.

    Args:
        a (PolyRegion): Region to sample; must have positive area when n > 0.
        n (int): Number of points.
        seed (int | np.random.Generator): Seed or generator; equal seeds give
            equal samples.

    Returns:
        np.ndarray: ``(n, 2)`` array; every row lies inside ``a``.

    Raises:
        EmptyRegion: If ``a`` has zero area and ``n > 0``.
    """
    if n < 0:
        raise ValueError(f"n must be non-negative, got {n}")
    if n == 0:
        return np.zeros((0, 2))
    tris = triangle_array(a)
    areas = _triangle_areas(tris)
    if len(tris) == 0 or areas.sum() <= 0:
        raise EmptyRegion("Cannot sample from a region with zero area")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    picks = rng.choice(len(tris), size=n, p=areas / areas.sum())
    r1 = np.sqrt(rng.random(n))[:, None]
    r2 = rng.random(n)[:, None]
    A, B, C = tris[picks, 0], tris[picks, 1], tris[picks, 2]
    return (1 - r1) * A + r1 * (1 - r2) * B + r1 * r2 * C
