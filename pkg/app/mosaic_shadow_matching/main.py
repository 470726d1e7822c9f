"""
Mosaic Shadow Matching API
Builds probabilistic polytope mosaics from building maps and satellite
geometry, and compares them against GMM and grid baselines.
"""

import logging
from typing import List

from fastapi import FastAPI, HTTPException, Query, status

from errors import ShadowMatchingError
from harness import generate_canyon, run_mosaic, run_sweep, validate_scenario
from models import Scenario, SweepRequest, SweepRow, ValidationReport
from mosaic import leaves, pmf, violation_probability
from utils import FileError

logger = logging.getLogger(__name__)

app = FastAPI(
    title="Mosaic Shadow Matching API",
    description="Risk-aware GNSS shadow matching over a probabilistic polytope mosaic",
    version="1.0.0",
)


def _unprocessable(e: Exception) -> HTTPException:
    return HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=str(e))


@app.get("/")
def read_root():
    """Welcome endpoint with API information"""
    return {
        "message": "Welcome to the Mosaic Shadow Matching API!",
        "description": "Post a scenario to build its mosaic, sweep classifier posteriors or validate the tree",
        "endpoints": {
            "build_mosaic": "POST /mosaic/",
            "sweep": "POST /sweep/",
            "validate": "POST /validate/",
            "canyon_template": "GET /generate/canyon",
        },
    }


@app.post("/mosaic/")
def build_mosaic(scenario: Scenario, repetitions: int = Query(default=1, ge=1, le=20)):
    """
    Build the mosaic for a scenario
    Returns the run report, p∅ and the leaf table (regions as bounds)
    """
    try:
        tree, report = run_mosaic(scenario, repetitions=repetitions)
        records = leaves(tree)
        conditional = pmf(tree).as_array(len(records))
    except ShadowMatchingError as e:
        raise _unprocessable(e)

    return {
        "report": report,
        "p_empty": violation_probability(tree),
        "leaves": [
            {
                "index": i,
                "mass": r.mass,
                "conditional_mass": float(conditional[i]),
                "area": r.area,
                "bounds": r.region.bounds,
                "labels": [f"{sat}:{vis.value}" for sat, vis in r.labels],
            }
            for i, r in enumerate(records)
        ],
    }


@app.post("/sweep/", response_model=List[SweepRow])
def sweep(request: SweepRequest):
    """
    Compare expected mosaics with the GMM and grid baselines
    One row per posterior, per (posterior, k) and per (posterior, gamma, resolution)
    """
    try:
        return run_sweep(
            request.scenario,
            posteriors=request.posteriors,
            gammas=request.gammas,
            grid_resolutions=request.grid_resolutions,
            gmm_ks=request.gmm_ks,
            seed=request.seed,
            gmm_samples=request.gmm_samples,
        )
    except ShadowMatchingError as e:
        raise _unprocessable(e)
    except FileError as e:
        raise HTTPException(status_code=status.HTTP_500_INTERNAL_SERVER_ERROR, detail=str(e))


@app.post("/validate/", response_model=ValidationReport)
def validate(scenario: Scenario, orderings: int = Query(default=20, ge=1, le=100), seed: int = 0):
    """Run the tree property checks on a scenario"""
    try:
        return validate_scenario(scenario, orderings=orderings, seed=seed)
    except ShadowMatchingError as e:
        raise _unprocessable(e)


@app.get("/generate/canyon", response_model=Scenario)
def canyon(satellites: int = Query(default=14, ge=1, le=64), seed: int = 0):
    """Urban-canyon scenario template"""
    try:
        return generate_canyon(n_satellites=satellites, seed=seed)
    except (ShadowMatchingError, ValueError) as e:
        raise _unprocessable(e)


if __name__ == "__main__":
    import uvicorn

    uvicorn.run(app, host="0.0.0.0", port=8000)
