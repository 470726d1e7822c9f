"""
Set-based confidence collections.

A confidence collection is a group of sets (mosaic leaves or grid squares)
whose conditional masses add up to at least a confidence level gamma. Sets
are taken greedily, heaviest first, so the collection uses as few sets as
possible; its outline is the union of the chosen sets.
"""

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

from errors import UnreachableConfidence
from geometry import PolyRegion, region_union_all
from mosaic import LeafRecord, Pmf

OBJECTIVES = ("mass", "density")

# Cumulative-mass slack so gamma = 1 is reachable despite rounding
MASS_TOL = 1e-12


@dataclass(frozen=True)
class ConfidenceCollection:
    """
    Members chosen to reach ``gamma``.

    Attributes:
        gamma (float): Target confidence in (0, 1].
        members (Tuple[int, ...]): Set indices in selection order.
        masses (Tuple[float, ...]): Conditional mass of each member.
        regions (Tuple[PolyRegion, ...]): Region of each member.
        achieved (float): Sum of member masses.
    """
    gamma: float
    members: Tuple[int, ...]
    masses: Tuple[float, ...]
    regions: Tuple[PolyRegion, ...]
    achieved: float

    def __len__(self) -> int:
        return len(self.members)


def _check_gamma(gamma: float) -> float:
    if not (0.0 < gamma <= 1.0):
        raise UnreachableConfidence(f"gamma must lie in (0, 1], got {gamma}")
    return float(gamma)


def select_members(
    masses: Sequence[float], areas: Sequence[float], gamma: float, objective: str = "mass"
) -> List[int]:
    """
    Greedy selection shared by mosaic and grid collections.

    Args:
        masses (Sequence[float]): Conditional mass per candidate set.
        areas (Sequence[float]): Area per candidate set (tie-breaker).
        gamma (float): Confidence level in (0, 1].
        objective (str): "mass" orders by mass, then larger area, then index.
            "density" orders by mass per unit area, which trades more members
            for a smaller outline.

    Returns:
        List[int]: Selected indices in selection order.

    Raises:
        UnreachableConfidence: If gamma is outside (0, 1] or the masses sum
            to less than gamma.
    """
    gamma = _check_gamma(gamma)
    if objective not in OBJECTIVES:
        raise ValueError(f"Unknown objective {objective!r}; expected one of {OBJECTIVES}")
    candidates = [i for i, m in enumerate(masses) if m > 0]
    if objective == "mass":
        candidates.sort(key=lambda i: (-masses[i], -areas[i], i))
    else:
        candidates.sort(key=lambda i: (-masses[i] / areas[i], -masses[i], i))
    chosen, total = [], 0.0
    for i in candidates:
        chosen.append(i)
        total += masses[i]
        if total >= gamma - MASS_TOL:
            return chosen
    raise UnreachableConfidence(f"Masses sum to {total:.6g}, short of gamma = {gamma}")


def _collect(masses, regions, gamma, objective) -> ConfidenceCollection:
    areas = [r.area for r in regions]
    chosen = select_members(masses, areas, gamma, objective)
    return ConfidenceCollection(
        gamma=gamma,
        members=tuple(chosen),
        masses=tuple(masses[i] for i in chosen),
        regions=tuple(regions[i] for i in chosen),
        achieved=math.fsum(masses[i] for i in chosen),
    )


def build_collection(
    pmf: Pmf, leaves: Sequence[LeafRecord], gamma: float, objective: str = "mass"
) -> ConfidenceCollection:
    """
    Confidence collection over mosaic leaves.

    Args:
        pmf (Pmf): AOI-conditioned leaf masses.
        leaves (Sequence[LeafRecord]): Leaves the PMF indexes into.
        gamma (float): Confidence level in (0, 1].
        objective (str): Selection order, see :func:`select_members`.

    Returns:
        ConfidenceCollection: Members sorted by descending mass under the
        default objective.

    Raises:
        UnreachableConfidence: If gamma is outside (0, 1].
    """
    masses = pmf.as_array(len(leaves)).tolist()
    return _collect(masses, [leaf.region for leaf in leaves], gamma, objective)


def collection_from_sets(
    masses: Sequence[float], regions: Sequence[PolyRegion], gamma: float, objective: str = "mass"
) -> ConfidenceCollection:
    """Confidence collection over arbitrary weighted sets (used for grid squares)."""
    return _collect(list(masses), list(regions), gamma, objective)


def outline(c: ConfidenceCollection) -> PolyRegion:
    """Union of the member regions."""
    return region_union_all(c.regions)


def collection_area(c: ConfidenceCollection) -> float:
    return outline(c).area


def is_disjoint(c: ConfidenceCollection) -> Tuple[bool, int]:
    """Whether the outline splits into several faces, and how many."""
    faces = outline(c).num_faces
    return faces >= 2, faces
