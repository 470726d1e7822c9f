"""
Runtime configuration for Mosaic Shadow Matching.

All tunables live in one pydantic model. Values come from the defaults below
and may be overridden through ``MZSM_*`` environment variables, e.g.
``MZSM_EPS_AREA=1e-8`` to loosen the empty-area tolerance.
"""

import os
from functools import lru_cache
from typing import Dict

from pydantic import BaseModel, Field, ValidationError

from errors import ConfigError

# Environment variable -> Settings field
ENV_OVERRIDES: Dict[str, str] = {
    "MZSM_EPS_AREA": "eps_area",
    "MZSM_ORACLE_CAP": "oracle_cap",
    "MZSM_DEBUG": "debug_validate",
    "MZSM_TIMING_REPETITIONS": "timing_repetitions",
    "MZSM_GMM_SAMPLES": "gmm_samples",
    "MZSM_DEFAULT_PRIOR": "default_prior",
}


class Settings(BaseModel):
    """
    Tunable constants shared by every module.

    Attributes:
        eps_area (float): Area (m²) at or below which a region counts as empty.
        oracle_cap (int): Largest shadow count the full-tree oracle accepts.
        debug_validate (bool): Re-validate every boolean-operation result.
        timing_repetitions (int): Repetitions used for median per-layer timing.
        gmm_samples (int): Mosaic samples drawn before fitting a GMM.
        gmm_replicates (int): EM restarts; the best likelihood wins.
        quad_resolution (float): Cell side (m) for the integrated percent error.
        pdf_quad_resolution (float): Cell side (m) for PDF normalization checks.
        em_tol (float): Relative log-likelihood change that stops EM.
        em_max_iter (int): EM iteration cap.
        reg_covar (float): Covariance floor (m²) added on every M-step.
        default_prior (float): p(AOI) used when a scenario does not give one.
        large_leaf_area (float): Area (m²) above which a leaf counts as large in reports.
    """
    eps_area: float = Field(default=1e-9, gt=0)
    oracle_cap: int = Field(default=12, ge=0, le=20)
    debug_validate: bool = False
    timing_repetitions: int = Field(default=5, ge=1)
    gmm_samples: int = Field(default=100_000, ge=10)
    gmm_replicates: int = Field(default=5, ge=1)
    quad_resolution: float = Field(default=0.5, gt=0)
    pdf_quad_resolution: float = Field(default=0.25, gt=0)
    em_tol: float = Field(default=1e-7, gt=0)
    em_max_iter: int = Field(default=500, ge=1)
    reg_covar: float = Field(default=1e-4, ge=0)
    default_prior: float = Field(default=1.0, gt=0, le=1)
    large_leaf_area: float = Field(default=5.0, ge=0)

    @classmethod
    def from_env(cls, environ: Dict[str, str] = None) -> "Settings":
        """
        Build settings from defaults plus ``MZSM_*`` overrides.

        Raises:
            ConfigError: If an override cannot be parsed or is out of range.
        """
        environ = os.environ if environ is None else environ
        values = {field: environ[name] for name, field in ENV_OVERRIDES.items() if name in environ}
        try:
            return cls(**values)
        except ValidationError as e:
            raise ConfigError(f"Invalid MZSM_* override: {e}") from e


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Process-wide settings; call ``get_settings.cache_clear()`` after changing the environment."""
    return Settings.from_env()
