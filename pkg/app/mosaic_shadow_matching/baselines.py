"""
Comparison models for the mosaic.

Two baselines sit beside the mosaic:

- Gaussian mixtures fitted by EM to points sampled from the mosaic, compared
  through the integrated absolute error of the AOI-truncated densities
  (bounded to [0, 2]).
- Set-augmented grid shadow matching (SA-GBSM): square cells tiling the AOI
  box, each scored by the product of per-satellite match probabilities and
  turned into confidence collections with the same greedy rule as the mosaic.
  The overlap with the mosaic collections is measured by IOU.
"""

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp
from scipy.stats import multivariate_normal
from sklearn.exceptions import ConvergenceWarning
from sklearn.mixture import GaussianMixture

from config import get_settings
from confidence import ConfidenceCollection, collection_from_sets
from errors import AllMassLost, BothEmpty, SingularFit
from geometry import Box, Coordinate, PolyRegion, as_point, contains_points, region_intersection, region_union
from mosaic import Aoi, MosaicTree
from shadows import ShadowRegion

logger = logging.getLogger(__name__)


# -- Gaussian mixtures ---------------------------------------------------------


@dataclass(frozen=True)
class GmmModel:
    """
    A fitted k-component Gaussian mixture over the ground plane.

    Attributes:
        weights (np.ndarray): ``(k,)`` mixing weights summing to 1.
        means (np.ndarray): ``(k, 2)`` component means (m).
        covariances (np.ndarray): ``(k, 2, 2)`` SPD covariances (m²).
        log_likelihood (float): Mean per-sample log-likelihood of the fit.
        trace (Tuple[float, ...]): Log-likelihood per EM iteration of the winning replicate.
        replicate_log_likelihoods (Tuple[float, ...]): Final log-likelihood of every replicate.
    """
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    log_likelihood: float
    trace: Tuple[float, ...] = ()
    replicate_log_likelihoods: Tuple[float, ...] = ()

    @property
    def k(self) -> int:
        return len(self.weights)

    def log_pdf(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        return logsumexp(_component_log_pdf(xy, self.means, self.covariances) + np.log(self.weights), axis=1)

    def pdf(self, xy: np.ndarray) -> np.ndarray:
        """Untruncated mixture density (infinite support)."""
        return np.exp(self.log_pdf(xy))


def _component_log_pdf(X: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    try:
        return np.column_stack([multivariate_normal.logpdf(X, mean=m, cov=c) for m, c in zip(means, covs)])
    except (np.linalg.LinAlgError, ValueError) as e:
        raise SingularFit(f"Covariance is not positive definite: {e}") from e


def _em_replicate(X: np.ndarray, k: int, seed: Sequence[int], settings) -> GmmModel:
    gm = GaussianMixture(
        n_components=k,
        covariance_type="full",
        init_params="k-means++",
        reg_covar=settings.reg_covar,
        max_iter=1,
        warm_start=True,
        random_state=int(np.random.SeedSequence(seed).generate_state(1)[0]),
    )
    trace: List[float] = []
    with warnings.catch_warnings():
        # One EM step per fit call; sklearn flags each as unconverged
        warnings.simplefilter("ignore", ConvergenceWarning)
        for _ in range(settings.em_max_iter):
            try:
                gm.fit(X)
            except ValueError as e:
                raise SingularFit(str(e)) from e
            trace.append(float(gm.lower_bound_))
            if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= settings.em_tol * abs(trace[-2]):
                break
        else:
            logger.warning("EM hit %d iterations without converging (k=%d)", settings.em_max_iter, k)
    return GmmModel(
        weights=gm.weights_,
        means=gm.means_,
        covariances=gm.covariances_,
        log_likelihood=float(gm.score(X)),
        trace=tuple(trace),
    )


def fit_gmm(
    samples: np.ndarray,
    k: int,
    replicates: Optional[int] = None,
    seed: int = 0,
    workers: int = 1,
) -> GmmModel:
    """
    Fit a k-component GMM by EM, keeping the best of several restarts.

    Each replicate is a scikit-learn ``GaussianMixture`` seeded with
    k-means++ and stepped one EM iteration at a time until the relative
    log-likelihood change drops below ``em_tol`` or ``em_max_iter`` is
    reached. ``reg_covar`` is added to every covariance.

    Args:
        samples (np.ndarray): ``(n, 2)`` points, n >= 10 k.
        k (int): Number of components, >= 1.
        replicates (int | None): EM restarts; defaults to ``gmm_replicates`` (5).
        seed (int): Base seed; replicate r uses ``(seed, r)``.
        workers (int): Replicates run concurrently on this many threads.

    Returns:
        GmmModel: The highest-likelihood replicate.

    Raises:
        SingularFit: If every replicate collapses.
    """
    settings = get_settings()
    X = np.asarray(samples, dtype=float).reshape(-1, 2)
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    if len(X) < 10 * k:
        raise ValueError(f"Need at least {10 * k} samples for k={k}, got {len(X)}")
    replicates = settings.gmm_replicates if replicates is None else replicates

    def run(r: int) -> Optional[GmmModel]:
        try:
            return _em_replicate(X, k, (seed, r), settings)
        except SingularFit as e:
            logger.warning("EM replicate %d (k=%d) collapsed: %s", r, k, e)
            return None

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fits = list(pool.map(run, range(replicates)))
    else:
        fits = [run(r) for r in range(replicates)]
    good = [f for f in fits if f is not None]
    if not good:
        raise SingularFit(f"All {replicates} EM replicates collapsed for k={k}")
    best = max(good, key=lambda f: f.log_likelihood)
    return GmmModel(
        weights=best.weights,
        means=best.means,
        covariances=best.covariances,
        log_likelihood=best.log_likelihood,
        trace=best.trace,
        replicate_log_likelihoods=tuple(f.log_likelihood for f in good),
    )


class TruncatedGmm:
    """A GMM conditioned on a box: the mixture divided by its integral over the box."""

    def __init__(self, model: GmmModel, box: Box, quad_resolution: Optional[float] = None):
        self.model = model
        self.box = box
        resolution = get_settings().quad_resolution if quad_resolution is None else quad_resolution
        xy, cell_area = box.midpoint_grid(resolution)
        self.normalizer = float(model.pdf(xy).sum() * cell_area)
        if self.normalizer <= 0:
            raise SingularFit("The mixture has no mass inside the AOI box")

    def __call__(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        b = self.box
        inside = (xy[:, 0] >= b.xmin) & (xy[:, 0] <= b.xmax) & (xy[:, 1] >= b.ymin) & (xy[:, 1] <= b.ymax)
        out = np.zeros(len(xy))
        if inside.any():
            out[inside] = self.model.pdf(xy[inside]) / self.normalizer
        return out


def truncated_gmm_pdf(m: GmmModel, aoi_box: Box, p: Coordinate, quad_resolution: Optional[float] = None) -> float:
    """AOI-truncated mixture density at ``p``; zero outside the box."""
    p = as_point(p)
    return float(TruncatedGmm(m, aoi_box, quad_resolution)(np.array([[p.x, p.y]]))[0])


def integrated_percent_error(m: GmmModel, tree: MosaicTree, quad_resolution: Optional[float] = None) -> float:
    """
    δ% = ∬ |f_GMM − f_mosaic| over the AOI box, as a fraction in [0, 2].

    The mosaic side is integrated exactly per grid cell; the mixture uses
    the cell midpoints and is renormalized over the box.
    """
    resolution = get_settings().quad_resolution if quad_resolution is None else quad_resolution
    xy, cell_area = tree.box.midpoint_grid(resolution)
    g = m.pdf(xy) * cell_area
    f = tree.density().cell_masses(tree.box, resolution)
    g_total, f_total = g.sum(), f.sum()
    if g_total <= 0:
        raise SingularFit("The mixture has no mass inside the AOI box")
    if f_total <= 0:
        raise AllMassLost("The mosaic has no mass inside the AOI box")
    delta = float(np.abs(g / g_total - f / f_total).sum())
    return min(max(delta, 0.0), 2.0)


# -- set-augmented grid shadow matching -------------------------------------------


def _match_scores(xy: np.ndarray, shadows: Sequence[ShadowRegion], p_los_list: Sequence[float]) -> np.ndarray:
    if len(shadows) != len(p_los_list):
        raise ValueError(f"{len(shadows)} shadows but {len(p_los_list)} probabilities")
    scores = np.ones(len(xy))
    for shadow, p_los in zip(shadows, p_los_list):
        blocked = contains_points(shadow.region, xy)
        # Ideal building model: p(LOS | boundary) is 1 outside shadows and 0 inside
        scores *= np.where(blocked, 1.0 - p_los, p_los)
    return scores


def sagbsm_score(cell_center: Coordinate, shadows: Sequence[ShadowRegion], p_los_list: Sequence[float]) -> float:
    """Product over satellites of the match probability at one cell center."""
    p = as_point(cell_center)
    return float(_match_scores(np.array([[p.x, p.y]]), shadows, p_los_list)[0])


@dataclass(frozen=True)
class GridCell:
    center: Tuple[float, float]
    square: PolyRegion
    score: float
    mass: float


@dataclass(frozen=True)
class GridModel:
    """
    Square cells tiling the AOI box.

    Cells have side ``resolution`` and start at the box's lower-left corner;
    the last row and column may overhang the box.
    """
    resolution: float
    box: Box
    centers: np.ndarray
    scores: np.ndarray
    masses: np.ndarray

    @property
    def n_cells(self) -> int:
        return len(self.centers)

    def square(self, i: int) -> PolyRegion:
        x, y = self.centers[i]
        h = self.resolution / 2
        return PolyRegion.box(x - h, y - h, x + h, y + h)

    @property
    def cells(self) -> List[GridCell]:
        return [
            GridCell(center=(float(c[0]), float(c[1])), square=self.square(i), score=float(s), mass=float(m))
            for i, (c, s, m) in enumerate(zip(self.centers, self.scores, self.masses))
        ]


def build_grid(
    aoi: Aoi, resolution: float, shadows: Sequence[ShadowRegion], p_los_list: Sequence[float]
) -> GridModel:
    """
    Score a square grid over the AOI box.

    Cells whose center is outside the AOI region (inside a building footprint,
    or past the box edge) score 0. Scores are normalized into a PMF.

    Raises:
        AllMassLost: If no cell center scores above zero.
    """
    if resolution <= 0:
        raise ValueError(f"resolution must be positive, got {resolution}")
    box = aoi.box
    nx = max(1, math.ceil(box.width / resolution - 1e-9))
    ny = max(1, math.ceil(box.height / resolution - 1e-9))
    xs = box.xmin + resolution * (np.arange(nx) + 0.5)
    ys = box.ymin + resolution * (np.arange(ny) + 0.5)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    centers = np.column_stack([gx.ravel(), gy.ravel()])
    scores = _match_scores(centers, shadows, p_los_list)
    scores[~contains_points(aoi.region, centers)] = 0.0
    total = scores.sum()
    if total <= 0:
        raise AllMassLost(f"No {resolution:g} m grid cell has positive score")
    masses = scores / total
    logger.debug("Grid %.3g m: %d cells, %d scoring", resolution, len(centers), int((scores > 0).sum()))
    return GridModel(resolution=float(resolution), box=box, centers=centers, scores=scores, masses=masses)


def grid_collection(g: GridModel, gamma: float, objective: str = "mass") -> ConfidenceCollection:
    """Confidence collection over grid squares, same greedy rule as the mosaic."""
    cells = g.cells
    return collection_from_sets([c.mass for c in cells], [c.square for c in cells], gamma, objective)


def grid_position_estimate(g: GridModel) -> Tuple[np.ndarray, np.ndarray]:
    """Mass-weighted mean and covariance of the cell centers (point-grid summary)."""
    mean = g.masses @ g.centers
    diff = g.centers - mean
    return mean, (g.masses[:, None] * diff).T @ diff


def iou(a: PolyRegion, b: PolyRegion) -> float:
    """
    Intersection over union (Jaccard index) by area.

    Raises:
        BothEmpty: If neither region has area.
    """
    if a.is_empty() and b.is_empty():
        raise BothEmpty("IOU is undefined for two empty regions")
    union = region_union(a, b).area
    return min(1.0, region_intersection(a, b).area / union)
