"""
Probabilistic polytope mosaic built from GNSS shadows.

The tree root is the area of interest with probability p(AOI). Each shadow is
overlaid on the tree in turn. A leaf that the shadow splits gains a LOS child
(leaf − shadow, score · p_los) and an NLOS child (leaf ∩ shadow,
score · (1 − p_los)). A node the shadow misses entirely, or covers entirely,
is not split: its leaves are rescaled by p_los or 1 − p_los instead, and the
discarded mass is what the AOI-violation probability p∅ measures.

Only non-empty nodes are stored, so the leaf count grows roughly
quadratically with the number of shadows instead of as 2ⁿ.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
import shapely
from shapely.strtree import STRtree

from config import get_settings
from errors import AllMassLost, DegenerateNode, OracleCapExceeded, ProbabilityOutOfRange
from geometry import (
    Box,
    Coordinate,
    PolyRegion,
    as_point,
    contains_points,
    region_difference,
    region_intersection,
    sample_uniform,
    symmetric_difference_area,
)
from shadows import ShadowRegion, Visibility, truth_designation

logger = logging.getLogger(__name__)

BranchLabel = Tuple[str, Visibility]


class OverlapCase(str, Enum):
    NO_SHADOW_OVERLAP = "no_shadow_overlap"
    SPLIT_OVERLAP = "split_overlap"
    FULL_SHADOW_OVERLAP = "full_shadow_overlap"


def _check_probability(value: float, name: str) -> float:
    if not (0.0 <= value <= 1.0) or math.isnan(value):
        raise ProbabilityOutOfRange(f"{name} must lie in [0, 1], got {value}")
    return float(value)


@dataclass(frozen=True)
class Aoi:
    """
    Area of interest: the region assumed to contain the receiver.

    Attributes:
        region (PolyRegion): Usually a box minus building footprints.
        prior (float): p(AOI), in (0, 1].
        box (Box | None): Bounding rectangle used for quadrature; defaults to
            the region bounds.
    """
    region: PolyRegion
    prior: float = 1.0
    box: Optional[Box] = None

    def __post_init__(self):
        if not (0.0 < self.prior <= 1.0):
            raise ProbabilityOutOfRange(f"AOI prior must lie in (0, 1], got {self.prior}")
        if self.region.is_empty():
            raise DegenerateNode("The AOI has zero area")
        if self.box is None:
            object.__setattr__(self, "box", Box(*self.region.bounds))


@dataclass
class MosaicNode:
    """One node polytope with its probability score and optional children."""
    region: PolyRegion
    score: float
    los_child: Optional["MosaicNode"] = None
    nlos_child: Optional["MosaicNode"] = None
    branch_labels: Tuple[BranchLabel, ...] = ()

    @property
    def is_leaf(self) -> bool:
        return self.los_child is None and self.nlos_child is None

    def iter_leaves(self) -> Iterator["MosaicNode"]:
        """Depth-first, LOS child before NLOS child."""
        stack = [self]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                yield node
                continue
            if node.nlos_child is not None:
                stack.append(node.nlos_child)
            if node.los_child is not None:
                stack.append(node.los_child)


@dataclass
class MosaicTree:
    """
    The memory-efficient binary tree.

    Only leaf scores are kept current; internal-node scores hold the value
    they had when the node was split.
    """
    root: MosaicNode
    prior: float
    box: Box
    processed: List[Tuple[ShadowRegion, float]] = field(default_factory=list)
    discarded: List[float] = field(default_factory=list)
    _density: Optional[Tuple[int, "MosaicDensity"]] = field(default=None, compare=False, repr=False)

    @classmethod
    def from_aoi(cls, aoi: Aoi) -> "MosaicTree":
        return cls(root=MosaicNode(region=aoi.region, score=aoi.prior), prior=aoi.prior, box=aoi.box)

    @property
    def aoi_region(self) -> PolyRegion:
        return self.root.region

    @property
    def depth(self) -> int:
        return len(self.processed)

    def leaf_nodes(self) -> List[MosaicNode]:
        return list(self.root.iter_leaves())

    def density(self) -> "MosaicDensity":
        """The PDF for the current layer, rebuilt only after the tree grows."""
        if self._density is None or self._density[0] != self.depth:
            self._density = (self.depth, MosaicDensity(self))
        return self._density[1]


@dataclass(frozen=True)
class LeafRecord:
    """A leaf snapshot: region, unconditioned mass and the split labels that led to it."""
    region: PolyRegion
    mass: float
    labels: Tuple[BranchLabel, ...] = ()

    @property
    def area(self) -> float:
        return self.region.area


@dataclass(frozen=True)
class Pmf:
    """Leaf probabilities conditioned on the AOI; zero-mass leaves are omitted."""
    entries: Tuple[Tuple[int, float], ...]

    @property
    def total(self) -> float:
        return math.fsum(m for _, m in self.entries)

    def as_array(self, n_leaves: int) -> np.ndarray:
        out = np.zeros(n_leaves)
        for index, mass in self.entries:
            out[index] = mass
        return out


# -- overlap classification and expansion -----------------------------------


def classify_overlap(node_region: PolyRegion, shadow: PolyRegion) -> OverlapCase:
    """
    Decide which of the three overlap cases holds.

    Args:
        node_region (PolyRegion): Non-empty node polytope.
        shadow (PolyRegion): Shadow polytope, possibly empty.

    Returns:
        OverlapCase: NO_SHADOW_OVERLAP when the intersection has no area,
        FULL_SHADOW_OVERLAP when the node is (up to eps_area) inside the
        shadow, SPLIT_OVERLAP otherwise.

    Raises:
        DegenerateNode: If the node has area <= eps_area.
    """
    case, _ = _classify(node_region, shadow)
    return case


def _classify(node_region: PolyRegion, shadow: PolyRegion) -> Tuple[OverlapCase, Optional[PolyRegion]]:
    eps = get_settings().eps_area
    if node_region.area <= eps:
        raise DegenerateNode(f"Node area {node_region.area:.3g} m² is at or below eps_area {eps:g}")
    if shadow.num_faces == 0 or not _bounds_overlap(node_region.bounds, shadow.bounds):
        return OverlapCase.NO_SHADOW_OVERLAP, None
    overlap = region_intersection(node_region, shadow)
    if overlap.area <= eps:
        return OverlapCase.NO_SHADOW_OVERLAP, None
    if node_region.area - overlap.area <= eps:
        return OverlapCase.FULL_SHADOW_OVERLAP, overlap
    return OverlapCase.SPLIT_OVERLAP, overlap


def _bounds_overlap(a: Tuple[float, ...], b: Tuple[float, ...]) -> bool:
    return a[0] <= b[2] and b[0] <= a[2] and a[1] <= b[3] and b[1] <= a[3]


def _scale_leaves(node: MosaicNode, factor: float, lost: List[float]) -> None:
    for leaf in node.iter_leaves():
        lost.append(leaf.score * (1.0 - factor))
        leaf.score *= factor


def _expand_node(node: MosaicNode, shadow: ShadowRegion, p_los: float, stats: dict, lost: List[float]) -> None:
    case, overlap = _classify(node.region, shadow.region)
    stats[case] += 1
    if case is OverlapCase.NO_SHADOW_OVERLAP:
        _scale_leaves(node, p_los, lost)
    elif case is OverlapCase.FULL_SHADOW_OVERLAP:
        _scale_leaves(node, 1.0 - p_los, lost)
    elif node.is_leaf:
        remainder = region_difference(node.region, shadow.region)
        if remainder.area <= get_settings().eps_area:
            # Only slivers survived the subtraction
            stats[OverlapCase.SPLIT_OVERLAP] -= 1
            stats[OverlapCase.FULL_SHADOW_OVERLAP] += 1
            _scale_leaves(node, 1.0 - p_los, lost)
            return
        node.los_child = MosaicNode(
            region=remainder,
            score=p_los * node.score,
            branch_labels=node.branch_labels + ((shadow.satellite_id, Visibility.LOS),),
        )
        node.nlos_child = MosaicNode(
            region=overlap,
            score=(1.0 - p_los) * node.score,
            branch_labels=node.branch_labels + ((shadow.satellite_id, Visibility.NLOS),),
        )
    else:
        for child in (node.los_child, node.nlos_child):
            if child is not None:
                _expand_node(child, shadow, p_los, stats, lost)


def expand(tree: MosaicTree, shadow: ShadowRegion, p_los: float) -> MosaicTree:
    """
    Overlay one shadow on the tree (in place) and return the tree.

    Args:
        tree (MosaicTree): Tree to grow.
        shadow (ShadowRegion): Next shadow; an empty shadow only rescales.
        p_los (float): Probability that this satellite is received in LOS.

    Returns:
        MosaicTree: The same tree, one layer deeper.

    Raises:
        ProbabilityOutOfRange: If ``p_los`` is outside [0, 1].
    """
    p_los = _check_probability(p_los, "p_los")
    stats = {case: 0 for case in OverlapCase}
    lost: List[float] = []
    _expand_node(tree.root, shadow, p_los, stats, lost)
    tree.discarded.append(math.fsum(lost))
    tree.processed.append((shadow, p_los))
    logger.debug(
        "Layer %d (%s, p_los=%.4f): %s -> %d leaves",
        tree.depth, shadow.satellite_id, p_los,
        ", ".join(f"{c.value}={n}" for c, n in stats.items()), len(tree.leaf_nodes()),
    )
    return tree


def build_tree(aoi: Aoi, shadows: Sequence[Tuple[ShadowRegion, float]]) -> MosaicTree:
    """Expand a fresh tree with ``(shadow, p_los)`` pairs in order."""
    tree = MosaicTree.from_aoi(aoi)
    for shadow, p_los in shadows:
        expand(tree, shadow, p_los)
    return tree


# -- outputs -------------------------------------------------------------------


def leaves(tree: MosaicTree) -> List[LeafRecord]:
    """Leaves in deterministic depth-first, LOS-first order."""
    return [LeafRecord(region=n.region, mass=n.score, labels=n.branch_labels) for n in tree.root.iter_leaves()]


def violation_probability(tree: MosaicTree) -> float:
    """
    AOI-violation probability p∅ = p(AOI) − Σ leaf masses.

    Clipped to [0, p(AOI)] to absorb floating-point residue.
    """
    remaining = tree.prior - math.fsum(n.score for n in tree.root.iter_leaves())
    return min(max(remaining, 0.0), tree.prior)


def mass_conservation_error(tree: MosaicTree) -> float:
    """
    |Σ leaf masses + Σ discarded masses − p(AOI)|.

    Discarded mass is recorded layer by layer while the tree is expanded, so
    the check does not depend on how p∅ is derived.
    """
    total = math.fsum(n.score for n in tree.root.iter_leaves())
    return abs(total + math.fsum(tree.discarded) - tree.prior)


def pmf(tree: MosaicTree) -> Pmf:
    """
    Condition leaf masses on the AOI.

    Raises:
        AllMassLost: If every leaf has zero mass.
    """
    masses = [n.score for n in tree.root.iter_leaves()]
    total = math.fsum(masses)
    if total <= 0.0:
        raise AllMassLost("Every leaf has zero mass; the PMF is undefined")
    return Pmf(entries=tuple((i, m / total) for i, m in enumerate(masses) if m > 0.0))


class MosaicDensity:
    """
    Piecewise-constant PDF over the mosaic.

    Each leaf contributes ``conditional mass / leaf area`` inside itself.
    Building it once and evaluating many points avoids re-reading the tree.
    """

    def __init__(self, tree: MosaicTree):
        records = leaves(tree)
        conditional = pmf(tree).as_array(len(records))
        self.regions = [r.region for r in records]
        self.levels = np.array([c / r.area if c > 0 else 0.0 for c, r in zip(conditional, records)])
        for region in self.regions:
            shapely.prepare(region.geom)

    def __call__(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        out = np.zeros(len(xy))
        for region, level in zip(self.regions, self.levels):
            if level > 0:
                out[contains_points(region, xy)] += level
        return out

    def cell_masses(self, box: Box, resolution: float) -> np.ndarray:
        """
        Exact probability of each cell of ``box.grid_cells(resolution)``.

        Cells strictly inside a leaf take ``level · cell area``; cells crossing
        a leaf boundary take ``level · area(leaf ∩ cell)``. Leaves smaller
        than a cell are therefore never lost.
        """
        cells = box.grid_cells(resolution)
        cell_area = float(shapely.area(cells[0]))
        index = STRtree(cells)
        out = np.zeros(len(cells))
        for region, level in zip(self.regions, self.levels):
            if level <= 0:
                continue
            hits = index.query(region.geom, predicate="intersects")
            inner = index.query(region.geom, predicate="contains_properly")
            out[inner] += level * cell_area
            edge = np.setdiff1d(hits, inner)
            if len(edge):
                out[edge] += level * shapely.area(shapely.intersection(region.geom, cells[edge]))
        return out


def pdf_grid(tree: MosaicTree, xy: np.ndarray) -> np.ndarray:
    """Vectorized :func:`pdf_eval` over an ``(m, 2)`` array."""
    return tree.density()(xy)


def pdf_eval(tree: MosaicTree, p: Coordinate) -> float:
    """Mosaic density at one point (per m²); zero outside every leaf."""
    p = as_point(p)
    return float(pdf_grid(tree, np.array([[p.x, p.y]]))[0])


def sample_mosaic_with_leaves(tree: MosaicTree, n: int, seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Like :func:`sample_mosaic` but also returns the leaf index of each point."""
    records = leaves(tree)
    weights = pmf(tree).as_array(len(records))
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(n, weights / weights.sum())
    points, owners = [np.zeros((0, 2))], [np.zeros(0, dtype=int)]
    for index, count in enumerate(counts):
        if count:
            points.append(sample_uniform(records[index].region, int(count), rng))
            owners.append(np.full(count, index))
    points, owners = np.concatenate(points), np.concatenate(owners)
    order = rng.permutation(len(points))
    return points[order], owners[order]


def sample_mosaic(tree: MosaicTree, n: int, seed: int = 0) -> np.ndarray:
    """
    Draw ``n`` points from the mosaic PDF.

    A leaf is chosen by the PMF, then a point uniformly inside it. Equal
    seeds give equal samples.

    Returns:
        np.ndarray: ``(n, 2)`` sample array.
    """
    return sample_mosaic_with_leaves(tree, n, seed)[0]


# -- verification helpers --------------------------------------------------------


def full_tree_oracle(
    aoi: Aoi, shadows: Sequence[Tuple[ShadowRegion, float]], cap: Optional[int] = None
) -> List[LeafRecord]:
    """
    Exhaustive 2ⁿ expansion without pruning.

    Every node splits into ``node − shadow`` and ``node ∩ shadow`` whatever
    the overlap, so empty leaves (zero area, positive mass) are kept.

    Args:
        aoi (Aoi): Root region and prior.
        shadows (Sequence[Tuple[ShadowRegion, float]]): ``(shadow, p_los)`` pairs.
        cap (int | None): Largest accepted n; defaults to the configured oracle_cap.

    Returns:
        List[LeafRecord]: All 2ⁿ leaves in LOS-first order, labels for every shadow.

    Raises:
        OracleCapExceeded: If ``len(shadows) > cap``.
    """
    cap = get_settings().oracle_cap if cap is None else cap
    if len(shadows) > cap:
        raise OracleCapExceeded(f"The full-tree oracle is capped at {cap} shadows, got {len(shadows)}")
    level = [LeafRecord(region=aoi.region, mass=aoi.prior)]
    for shadow, p_los in shadows:
        p_los = _check_probability(p_los, "p_los")
        nxt = []
        for node in level:
            nxt.append(LeafRecord(
                region=region_difference(node.region, shadow.region),
                mass=node.mass * p_los,
                labels=node.labels + ((shadow.satellite_id, Visibility.LOS),),
            ))
            nxt.append(LeafRecord(
                region=region_intersection(node.region, shadow.region),
                mass=node.mass * (1.0 - p_los),
                labels=node.labels + ((shadow.satellite_id, Visibility.NLOS),),
            ))
        level = nxt
    return level


def expected_mosaic(
    aoi: Aoi,
    shadows: Sequence[ShadowRegion],
    truth: Coordinate,
    posterior: float,
    tnr: Optional[float] = None,
) -> MosaicTree:
    """
    Expected mosaic for a classifier of known accuracy.

    In expectation a classifier reports its true-positive rate for satellites
    that are LOS at the truth and one minus its true-negative rate for those
    that are NLOS. Rates are symmetric unless ``tnr`` is given.

    Args:
        aoi (Aoi): Area of interest.
        shadows (Sequence[ShadowRegion]): Shadows in processing order.
        truth (Coordinate): True receiver position.
        posterior (float): True-positive rate (LOS detection).
        tnr (float | None): True-negative rate; defaults to ``posterior``.

    Returns:
        MosaicTree: The expanded tree.
    """
    return build_tree(aoi, list(zip(shadows, expected_p_los(shadows, truth, posterior, tnr))))


def expected_p_los(
    shadows: Sequence[ShadowRegion], truth: Coordinate, posterior: float, tnr: Optional[float] = None
) -> List[float]:
    """Per-shadow p_los a classifier with the given rates reports in expectation."""
    tpr = _check_probability(posterior, "posterior")
    tnr = tpr if tnr is None else _check_probability(tnr, "tnr")
    truth = as_point(truth)
    return [tpr if truth_designation(truth, s) is Visibility.LOS else 1.0 - tnr for s in shadows]


def pair_leaves(
    a: Sequence[LeafRecord], b: Sequence[LeafRecord], area_tol: float, mass_tol: float = 1e-9
) -> Optional[List[Tuple[int, int]]]:
    """
    Match two leaf sets one-to-one by region overlap.

    Each leaf of ``a`` is paired with the unmatched leaf of ``b`` it overlaps
    most; a pair is accepted when the symmetric difference is below
    ``area_tol`` and the masses agree within ``mass_tol``.

    Returns:
        List[Tuple[int, int]] | None: Index pairs, or None if the sets differ.
    """
    if len(a) != len(b):
        return None
    index = STRtree([leaf.region.geom for leaf in b])
    free = set(range(len(b)))
    pairs = []
    for i, leaf in enumerate(a):
        best, best_overlap = None, -1.0
        for j in index.query(leaf.region.geom):
            j = int(j)
            if j not in free:
                continue
            overlap = region_intersection(leaf.region, b[j].region).area
            if overlap > best_overlap:
                best, best_overlap = j, overlap
        if best is None:
            return None
        if symmetric_difference_area(leaf.region, b[best].region) >= area_tol:
            return None
        if abs(leaf.mass - b[best].mass) >= mass_tol:
            return None
        free.discard(best)
        pairs.append((i, best))
    return pairs
