"""
Pydantic models for Mosaic Shadow Matching.

The scenario document (JSON file or HTTP body), run reports, sweep rows and
validation reports are all defined here, so the CLI, the HTTP surface and the
exporters agree on one schema.
"""

from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, computed_field, model_validator

from config import get_settings
from shadows import Satellite


class BuildingSpec(BaseModel):
    """
    One building in the scenario file.

    Attributes:
        id (str): Label, unique within the file.
        footprint (List[Tuple[float, float]]): Outer ring, at least 3 vertices (m).
        height (float): Roof height above the ground plane (m).
    """
    id: str = Field(min_length=1)
    footprint: List[Tuple[float, float]] = Field(min_length=3)
    height: float = Field(gt=0)

    model_config = ConfigDict(
        json_schema_extra={"example": {"id": "B1", "footprint": [[-40, -50], [-15, -50], [-15, -10], [-40, -10]], "height": 60}}
    )


class AoiBox(BaseModel):
    """The AOI bounding box; building footprints are removed from it on load."""
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    @model_validator(mode="after")
    def _positive_area(self) -> "AoiBox":
        if self.xmax <= self.xmin or self.ymax <= self.ymin:
            raise ValueError("aoi box must have xmax > xmin and ymax > ymin")
        return self


class ClassifierSpec(BaseModel):
    """
    LOS classifier input: per-satellite probabilities, a posterior, or both.

    When ``p_los`` is given it drives the mosaic directly; otherwise the
    expected mosaic is built from ``posterior`` (and optional ``tnr``).
    """
    p_los: Optional[List[float]] = None
    posterior: Optional[float] = Field(default=None, ge=0, le=1)
    tnr: Optional[float] = Field(default=None, ge=0, le=1)

    @model_validator(mode="after")
    def _one_mode(self) -> "ClassifierSpec":
        if self.p_los is None and self.posterior is None:
            raise ValueError("classifier needs p_los or posterior")
        if self.p_los is not None and any(not (0.0 <= p <= 1.0) for p in self.p_los):
            raise ValueError("every p_los must lie in [0, 1]")
        return self


class Scenario(BaseModel):
    """
    A complete scenario document.

    Attributes:
        buildings (List[BuildingSpec]): Extruded-prism buildings.
        satellites (List[Satellite]): Satellites with unique ids.
        aoi (AoiBox): Bounding box of the area of interest.
        truth (Tuple[float, float]): True receiver position (m).
        prior (float): p(AOI), defaults to the configured default_prior (1).
        classifier (ClassifierSpec): LOS probabilities or a classifier posterior.
        name (str): Free-form label carried into reports.
    """
    buildings: List[BuildingSpec] = Field(min_length=1)
    satellites: List[Satellite] = Field(min_length=1)
    aoi: AoiBox
    truth: Tuple[float, float]
    prior: float = Field(default_factory=lambda: get_settings().default_prior, gt=0, le=1)
    classifier: ClassifierSpec
    name: str = "scenario"

    @model_validator(mode="after")
    def _consistent(self) -> "Scenario":
        ids = [s.id for s in self.satellites]
        if len(set(ids)) != len(ids):
            raise ValueError("satellite ids must be unique")
        if self.classifier.p_los is not None and len(self.classifier.p_los) != len(self.satellites):
            raise ValueError(
                f"classifier.p_los has {len(self.classifier.p_los)} entries for {len(self.satellites)} satellites"
            )
        return self


class RunReport(BaseModel):
    """Per-layer bookkeeping of one mosaic run."""
    scenario: str
    leaf_counts: List[int]
    layer_times_ms: List[float]
    p_empty_trace: List[float]
    quadratic_fit: Tuple[float, float, float]
    r_squared: float
    total_time_ms: float
    leaf_areas: List[float] = []
    large_leaf_count: int = 0
    export_paths: List[str] = []


class ComparisonMetrics(BaseModel):
    """Baseline comparison metrics with their bounded ranges."""
    delta_percent: Optional[float] = Field(default=None, ge=0, le=2)
    iou: Optional[float] = Field(default=None, ge=0, le=1)


SWEEP_COLUMNS = (
    "kind", "posterior", "gamma", "resolution", "k", "n_leaves", "p_empty",
    "delta_percent", "iou", "mzsm_faces", "grid_faces", "achieved", "status", "error",
)


class SweepRow(BaseModel):
    """One row of the sweep table; unused columns stay empty."""
    kind: str
    posterior: float
    gamma: Optional[float] = None
    resolution: Optional[float] = None
    k: Optional[int] = None
    n_leaves: Optional[int] = None
    p_empty: Optional[float] = None
    delta_percent: Optional[float] = None
    iou: Optional[float] = None
    mzsm_faces: Optional[int] = None
    grid_faces: Optional[int] = None
    achieved: Optional[float] = None
    status: str = "ok"
    error: str = ""


class SweepRequest(BaseModel):
    """Body of ``POST /sweep/``."""
    scenario: Scenario
    posteriors: List[float] = Field(default=[0.5, 0.75, 0.85, 0.9999], min_length=1)
    gammas: List[float] = Field(default=[0.68, 0.95])
    grid_resolutions: List[float] = Field(default=[30.0, 10.0, 3.0])
    gmm_ks: List[int] = Field(default=[1, 2])
    seed: int = 0
    gmm_samples: Optional[int] = Field(default=None, ge=10)


class CheckResult(BaseModel):
    name: str
    passed: bool
    detail: str = ""


class ValidationReport(BaseModel):
    scenario: str
    checks: List[CheckResult]

    @computed_field
    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)
