"""
File exports for mosaics, PMFs, confidence collections, grids and sweep tables.

Regions go through geopandas to GeoJSON FeatureCollections (one
MultiPolygon feature per leaf or member) and tables to CSV. CSV floats are
written with ``repr`` so identical inputs give byte-identical files.
"""

import csv
import io
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Union

import geopandas as gpd
import numpy as np

from baselines import GridModel
from confidence import ConfidenceCollection
from errors import InvalidGeometry
from geometry import PolyRegion
from models import SWEEP_COLUMNS, RunReport, SweepRow, ValidationReport
from mosaic import LeafRecord, MosaicTree, Pmf, leaves, pmf
from shadows import Visibility
from utils import FileError, PathLike, write_json, write_text

logger = logging.getLogger(__name__)

Artifact = Union[MosaicTree, ConfidenceCollection, GridModel, RunReport, ValidationReport, Sequence[SweepRow]]


def _labels(labels) -> List[str]:
    return [f"{sat}:{vis.value}" for sat, vis in labels]


def _parse_labels(text: Optional[str]):
    parsed = []
    for label in (text or "").split(";"):
        if not label:
            continue
        sat, _, vis = label.rpartition(":")
        parsed.append((sat, Visibility(vis)))
    return tuple(parsed)


def _write_frame(frame: gpd.GeoDataFrame, path: PathLike) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        # The GeoJSON driver will not replace an existing file
        path.unlink(missing_ok=True)
        frame.to_file(path, driver="GeoJSON", engine="pyogrio", geometry_type="MultiPolygon")
    except (OSError, RuntimeError, ValueError) as e:
        raise FileError(f"Error writing {path}: {e}")
    return path


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: PathLike, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return write_text(path, buffer.getvalue())


def export_mosaic(tree: MosaicTree, path: PathLike) -> Path:
    """
    Write the mosaic leaves as a GeoJSON FeatureCollection.

    Each feature carries ``leaf``, ``mass`` (unconditioned), ``conditional_mass``,
    ``level`` (PDF value, per m²), ``area`` and ``labels``: the
    ``"<satellite>:<LOS|NLOS>"`` steps of the split path joined by ``;``.

    Args:
        tree (MosaicTree): Built tree.
        path (PathLike): Destination ``.geojson`` file.

    Returns:
        Path: The written path.

    Raises:
        FileError: If the file cannot be written.
    """
    records = leaves(tree)
    conditional = pmf(tree).as_array(len(records))
    frame = gpd.GeoDataFrame(
        {
            "leaf": np.arange(len(records), dtype=np.int64),
            "mass": np.array([r.mass for r in records], dtype=float),
            "conditional_mass": conditional.astype(float),
            "level": tree.density().levels.astype(float),
            "area": np.array([r.area for r in records], dtype=float),
            "labels": [";".join(_labels(r.labels)) for r in records],
        },
        geometry=[r.region.geom for r in records],
    )
    logger.info("Exporting %d leaves to %s", len(frame), path)
    return _write_frame(frame, path)


def load_mosaic_geojson(path: PathLike) -> List[LeafRecord]:
    """
    Read leaves back from :func:`export_mosaic` output.

    Raises:
        FileError: If the file cannot be read or is not a mosaic export.
    """
    path = Path(path)
    if not path.is_file():
        raise FileError(f"Error reading {path}: no such file")
    try:
        frame = gpd.read_file(path, engine="pyogrio").sort_values("leaf")
        return [
            LeafRecord(region=PolyRegion.from_shapely(geom), mass=float(mass), labels=_parse_labels(labels))
            for geom, mass, labels in zip(frame.geometry, frame["mass"], frame["labels"])
        ]
    except (KeyError, TypeError, ValueError, RuntimeError, InvalidGeometry) as e:
        raise FileError(f"{path} is not a mosaic export: {e}")


def export_pmf(tree: MosaicTree, path: PathLike, distribution: Optional[Pmf] = None) -> Path:
    """CSV with one row per leaf: ``leaf, mass, conditional_mass, area, labels``."""
    records = leaves(tree)
    conditional = (distribution or pmf(tree)).as_array(len(records))
    rows = [
        (i, r.mass, float(conditional[i]), r.area, " ".join(_labels(r.labels)))
        for i, r in enumerate(records)
    ]
    return _write_csv(path, ("leaf", "mass", "conditional_mass", "area", "labels"), rows)


def export_collection(c: ConfidenceCollection, path: PathLike) -> Path:
    """
    GeoJSON of the collection members in selection order.

    Features carry ``member``, ``rank``, ``conditional_mass`` and the running
    ``cumulative_mass``; a collection without members gives zero features.
    """
    masses = np.array(c.masses, dtype=float)
    frame = gpd.GeoDataFrame(
        {
            "member": np.array(c.members, dtype=np.int64),
            "rank": np.arange(len(c.members), dtype=np.int64),
            "conditional_mass": masses,
            "cumulative_mass": np.cumsum(masses),
        },
        geometry=gpd.GeoSeries([r.geom for r in c.regions]),
    )
    return _write_frame(frame, path)


def export_grid(g: GridModel, path: PathLike) -> Path:
    rows = [
        (i, float(c[0]), float(c[1]), float(s), float(m))
        for i, (c, s, m) in enumerate(zip(g.centers, g.scores, g.masses))
    ]
    return _write_csv(path, ("cell", "x", "y", "score", "mass"), rows)


def export_rows(rows: Sequence[SweepRow], path: PathLike) -> Path:
    """Sweep table with the fixed SWEEP_COLUMNS header."""
    table = [[getattr(row, column) for column in SWEEP_COLUMNS] for row in rows]
    return _write_csv(path, SWEEP_COLUMNS, table)


def export(artifact: Artifact, path: PathLike, format: Optional[str] = None) -> Path:
    """
    Write any artifact, picking the format from its type.

    Args:
        artifact: A tree, collection, grid, report or list of sweep rows.
        path (PathLike): Destination file.
        format (str | None): For trees, ``"geojson"`` (default) or ``"csv"``
            for the PMF table. Other artifacts have a single format.

    Raises:
        FileError: If the file cannot be written.
        ValueError: For an unknown artifact type or format.
    """
    if isinstance(artifact, MosaicTree):
        format = format or ("csv" if str(path).endswith(".csv") else "geojson")
        if format == "geojson":
            return export_mosaic(artifact, path)
        if format == "csv":
            return export_pmf(artifact, path)
        raise ValueError(f"Unknown mosaic export format {format!r}")
    if isinstance(artifact, ConfidenceCollection):
        return export_collection(artifact, path)
    if isinstance(artifact, GridModel):
        return export_grid(artifact, path)
    if isinstance(artifact, (RunReport, ValidationReport)):
        return write_json(path, artifact.model_dump(mode="json"))
    if isinstance(artifact, (list, tuple)) and all(isinstance(r, SweepRow) for r in artifact):
        return export_rows(artifact, path)
    raise ValueError(f"Cannot export {type(artifact).__name__}")


def export_samples(points, path: PathLike) -> Path:
    """CSV of sampled positions, one ``x, y`` row per point."""
    return _write_csv(path, ("x", "y"), [(float(x), float(y)) for x, y in points])
