import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from conftest import bit_cells
from errors import AllMassLost, DegenerateNode, OracleCapExceeded, ProbabilityOutOfRange
from geometry import Box, PolyRegion, contains_points, region_difference
from harness import check_completeness, check_overlap_cases, check_pdf_normalization, generate_random_shadows
from mosaic import (
    Aoi,
    MosaicTree,
    OverlapCase,
    build_tree,
    classify_overlap,
    expand,
    expected_mosaic,
    full_tree_oracle,
    leaves,
    mass_conservation_error,
    pair_leaves,
    pdf_eval,
    pdf_grid,
    pmf,
    sample_mosaic,
    sample_mosaic_with_leaves,
    violation_probability,
)
from shadows import ShadowRegion, Visibility


def test_overlap_cases():
    node = PolyRegion.box(0, 0, 10, 10)
    assert classify_overlap(node, PolyRegion.box(20, 20, 30, 30)) is OverlapCase.NO_SHADOW_OVERLAP
    assert classify_overlap(node, PolyRegion.box(-1, -1, 11, 11)) is OverlapCase.FULL_SHADOW_OVERLAP
    assert classify_overlap(node, PolyRegion.box(5, -1, 11, 11)) is OverlapCase.SPLIT_OVERLAP
    assert classify_overlap(node, PolyRegion.empty()) is OverlapCase.NO_SHADOW_OVERLAP


def test_shared_edge_is_no_overlap():
    assert classify_overlap(PolyRegion.box(0, 0, 1, 1), PolyRegion.box(1, 0, 2, 1)) is OverlapCase.NO_SHADOW_OVERLAP


def test_degenerate_node_is_rejected():
    with pytest.raises(DegenerateNode):
        classify_overlap(PolyRegion.empty(), PolyRegion.box(0, 0, 1, 1))


def test_first_split_creates_los_and_nlos_children():
    aoi = Aoi(region=PolyRegion.box(0, 0, 10, 10))
    tree = expand(MosaicTree.from_aoi(aoi), ShadowRegion("G1", PolyRegion.box(0, 0, 4, 10)), 0.3)
    los, nlos = tree.root.los_child, tree.root.nlos_child
    assert los.region.area == pytest.approx(60.0)
    assert nlos.region.area == pytest.approx(40.0)
    assert los.score == pytest.approx(0.3)
    assert nlos.score == pytest.approx(0.7)
    assert los.branch_labels == (("G1", Visibility.LOS),)


def test_missed_node_is_rescaled_not_split():
    aoi = Aoi(region=PolyRegion.box(0, 0, 10, 10), prior=0.9)
    tree = expand(MosaicTree.from_aoi(aoi), ShadowRegion("G1", PolyRegion.box(20, 0, 30, 10)), 0.25)
    assert tree.root.is_leaf
    assert tree.root.score == pytest.approx(0.225)
    assert violation_probability(tree) == pytest.approx(0.9 - 0.225)


def test_empty_shadow_only_rescales():
    aoi = Aoi(region=PolyRegion.box(0, 0, 10, 10))
    tree = build_tree(aoi, [(ShadowRegion("G1", PolyRegion.empty()), 0.8)])
    assert len(leaves(tree)) == 1
    assert leaves(tree)[0].mass == pytest.approx(0.8)


def test_probability_out_of_range_is_rejected():
    tree = MosaicTree.from_aoi(Aoi(region=PolyRegion.box(0, 0, 1, 1)))
    with pytest.raises(ProbabilityOutOfRange):
        expand(tree, ShadowRegion("G1", PolyRegion.box(0, 0, 1, 1)), 1.2)
    with pytest.raises(ProbabilityOutOfRange):
        Aoi(region=PolyRegion.box(0, 0, 1, 1), prior=0.0)


def test_illustrative_example_leaf_growth(illustrative):
    aoi, shadows = illustrative
    p_los = 0.2
    tree = MosaicTree.from_aoi(aoi)
    counts = []
    for shadow in shadows:
        expand(tree, shadow, p_los)
        counts.append(len(tree.leaf_nodes()))
    assert counts == [2, 3, 4]
    assert len(full_tree_oracle(aoi, [(s, p_los) for s in shadows])) == 8
    # Every surviving leaf's masses telescope to p_los, the rest is p_empty
    assert violation_probability(tree) == pytest.approx(1 - p_los, abs=1e-12)


def test_illustrative_example_leaf_masses(illustrative):
    aoi, shadows = illustrative
    p = 0.2
    tree = build_tree(aoi, [(s, p) for s in shadows])
    by_labels = {r.labels: r.mass for r in leaves(tree)}
    s1 = (("S1", Visibility.NLOS),)
    assert by_labels[s1] == pytest.approx((1 - p) * p * (1 - p))
    open_ground = (("S1", Visibility.LOS), ("S2", Visibility.LOS), ("S3", Visibility.LOS))
    assert by_labels[open_ground] == pytest.approx(p ** 3)


def test_leaves_are_ordered_los_first(illustrative):
    aoi, shadows = illustrative
    records = leaves(build_tree(aoi, [(s, 0.5) for s in shadows]))
    assert records[0].labels[0] == ("S1", Visibility.LOS)
    assert records[-1].labels == (("S1", Visibility.NLOS),)


def test_all_nlos_empty_leaf_gives_ten_to_minus_four():
    aoi, shadows = bit_cells(missing=15)
    tree = build_tree(aoi, [(s, 0.9) for s in shadows])
    assert len(leaves(tree)) == 15
    assert violation_probability(tree) == pytest.approx(0.0001, abs=1e-12)


def test_all_los_empty_leaf_gives_point_nine_to_the_fourth():
    aoi, shadows = bit_cells(missing=0)
    tree = build_tree(aoi, [(s, 0.9) for s in shadows])
    assert len(leaves(tree)) == 15
    assert violation_probability(tree) == pytest.approx(0.6561, abs=1e-12)


@pytest.mark.parametrize("missing", [0, 5, 15])
def test_pruned_tree_matches_oracle(missing):
    aoi, shadows = bit_cells(missing)
    pairs = list(zip(shadows, [0.9, 0.3, 0.55, 0.7]))
    tree = build_tree(aoi, pairs)
    full = full_tree_oracle(aoi, pairs)
    nonempty = [r for r in full if r.area > 1e-9]
    assert pair_leaves(leaves(tree), nonempty, area_tol=1e-9) is not None
    empty_mass = math.fsum(r.mass for r in full if r.area <= 1e-9)
    assert violation_probability(tree) == pytest.approx(empty_mass, abs=1e-12)


def test_oracle_cap():
    aoi, shadows = generate_random_shadows(13, seed=0)
    with pytest.raises(OracleCapExceeded):
        full_tree_oracle(aoi, [(s, 0.5) for s in shadows])


@pytest.mark.parametrize("seed", range(5))
def test_oracle_equivalence_on_random_shadows(seed):
    aoi, shadows = generate_random_shadows(6, seed=seed)
    pairs = [(s, p) for s, p in zip(shadows, np.linspace(0.2, 0.9, len(shadows)))]
    tree = build_tree(aoi, pairs)
    full = full_tree_oracle(aoi, pairs)
    nonempty = [r for r in full if r.area > 1e-9]
    assert pair_leaves(leaves(tree), nonempty, area_tol=1e-6 * aoi.region.area) is not None
    empty_mass = math.fsum(r.mass for r in full if r.area <= 1e-9)
    assert violation_probability(tree) == pytest.approx(empty_mass, abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 7))
def test_overlap_cases_are_exclusive_and_exhaustive(seed, n):
    aoi, shadows = generate_random_shadows(n, seed=seed)
    tree = build_tree(aoi, [(s, 0.6) for s in shadows])
    regions = [node.region for node in tree.root.iter_leaves()] + [tree.root.region]
    assert check_overlap_cases(regions, shadows).passed


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_leaves_tile_the_aoi(seed, n):
    aoi, shadows = generate_random_shadows(n, seed=seed)
    tree = build_tree(aoi, [(s, 0.7) for s in shadows])
    assert check_completeness(tree).passed
    assert mass_conservation_error(tree) <= 1e-12


def _assert_same_leaves(aoi, shadows, probabilities, order):
    base = leaves(build_tree(aoi, list(zip(shadows, probabilities))))
    permuted = leaves(build_tree(aoi, [(shadows[i], probabilities[i]) for i in order]))
    assert pair_leaves(base, permuted, area_tol=1e-6 * aoi.region.area) is not None


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.randoms(use_true_random=False))
def test_leaves_do_not_depend_on_shadow_order(seed, random):
    aoi, shadows = generate_random_shadows(6, seed=seed)
    probabilities = [0.15, 0.3, 0.5, 0.65, 0.8, 0.95]
    order = list(range(6))
    random.shuffle(order)
    _assert_same_leaves(aoi, shadows, probabilities, order)


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(100))
def test_ordering_invariance_acceptance(seed):
    aoi, shadows = generate_random_shadows(8, seed=seed)
    rng = np.random.default_rng(seed)
    probabilities = rng.uniform(0.05, 0.95, size=8).tolist()
    for _ in range(20):
        _assert_same_leaves(aoi, shadows, probabilities, rng.permutation(8).tolist())


def test_pmf_is_uniform_at_half():
    aoi, shadows = bit_cells(missing=15)
    tree = build_tree(aoi, [(s, 0.5) for s in shadows])
    distribution = pmf(tree)
    assert len(distribution.entries) == 15
    assert all(m == pytest.approx(1 / 15) for _, m in distribution.entries)
    assert distribution.total == pytest.approx(1.0, abs=1e-12)


def test_pmf_omits_zero_mass_leaves():
    aoi = Aoi(region=PolyRegion.box(0, 0, 10, 10))
    tree = build_tree(aoi, [(ShadowRegion("G1", PolyRegion.box(0, 0, 5, 10)), 1.0)])
    assert len(leaves(tree)) == 2
    assert [i for i, _ in pmf(tree).entries] == [0]


def test_pmf_with_no_mass_left_fails():
    aoi = Aoi(region=PolyRegion.box(0, 0, 10, 10))
    tree = build_tree(aoi, [(ShadowRegion("G1", PolyRegion.box(20, 0, 25, 10)), 0.0)])
    with pytest.raises(AllMassLost):
        pmf(tree)


def test_prior_scales_masses_but_not_pmf(illustrative):
    aoi, shadows = illustrative
    scaled = Aoi(region=aoi.region, prior=0.5, box=aoi.box)
    a = build_tree(aoi, [(s, 0.3) for s in shadows])
    b = build_tree(scaled, [(s, 0.3) for s in shadows])
    assert violation_probability(b) == pytest.approx(0.5 * violation_probability(a))
    assert [m for _, m in pmf(a).entries] == pytest.approx([m for _, m in pmf(b).entries])


def test_pdf_is_mass_over_area():
    aoi = Aoi(region=PolyRegion.box(0, 0, 10, 10))
    tree = build_tree(aoi, [(ShadowRegion("G1", PolyRegion.box(0, 0, 4, 10)), 0.75)])
    # LOS leaf: 0.75 over 60 m², NLOS leaf: 0.25 over 40 m²
    assert pdf_eval(tree, (8, 5)) == pytest.approx(0.75 / 60)
    assert pdf_eval(tree, (2, 5)) == pytest.approx(0.25 / 40)
    assert pdf_eval(tree, (20, 5)) == 0.0


def test_pdf_integrates_to_one(illustrative):
    aoi, shadows = illustrative
    tree = build_tree(aoi, [(s, 0.35) for s in shadows])
    xy, cell_area = Box(0, 0, 60, 60).midpoint_grid(0.25)
    assert pdf_grid(tree, xy).sum() * cell_area == pytest.approx(1.0, abs=1e-3)


def test_leaf_smaller_than_a_cell_keeps_its_mass():
    box = Box(0, 0, 10, 10)
    aoi = Aoi(region=box.to_region(), box=box)
    tree = build_tree(aoi, [(ShadowRegion("G1", PolyRegion.box(5, 5, 5.01, 5.01)), 0.001)])
    xy, cell_area = box.midpoint_grid(1.0)
    # No cell midpoint falls in the 1 cm leaf
    assert pdf_grid(tree, xy).sum() * cell_area < 0.01
    cells = tree.density().cell_masses(box, 1.0)
    assert cells.sum() == pytest.approx(1.0, abs=1e-9)
    assert cells[55] == pytest.approx(0.999 + 0.001 / 100, abs=1e-6)
    assert check_pdf_normalization(tree, 1.0).passed


def test_density_is_rebuilt_only_after_expansion():
    aoi = Aoi(region=PolyRegion.box(0, 0, 10, 10))
    tree = build_tree(aoi, [(ShadowRegion("G1", PolyRegion.box(0, 0, 4, 10)), 0.75)])
    density = tree.density()
    assert tree.density() is density
    assert pdf_eval(tree, (8, 5)) == pytest.approx(0.75 / 60)
    expand(tree, ShadowRegion("G2", PolyRegion.box(0, 0, 10, 5)), 0.5)
    assert tree.density() is not density
    assert pdf_eval(tree, (8, 8)) == pytest.approx(0.375 / 30)


def test_discarded_mass_is_tracked_per_layer(illustrative):
    aoi, shadows = illustrative
    tree = build_tree(aoi, [(s, 0.35) for s in shadows])
    assert len(tree.discarded) == len(shadows)
    assert math.fsum(tree.discarded) == pytest.approx(violation_probability(tree), abs=1e-12)
    assert mass_conservation_error(tree) <= 1e-12
    leaf = tree.leaf_nodes()[0]
    leaf.score *= 0.5
    assert mass_conservation_error(tree) == pytest.approx(leaf.score, rel=1e-9)


def test_pdf_inside_building_is_zero():
    box = Box(0, 0, 20, 20)
    footprint = PolyRegion.box(5, 5, 10, 10)
    aoi = Aoi(region=region_difference(box.to_region(), footprint), box=box)
    tree = build_tree(aoi, [(ShadowRegion("G1", PolyRegion.box(0, 0, 20, 7)), 0.6)])
    assert pdf_eval(tree, (7, 7)) == 0.0
    assert pdf_eval(tree, (1, 1)) > 0.0


def test_samples_follow_the_pmf():
    aoi, shadows = bit_cells(missing=15)
    tree = build_tree(aoi, [(s, 0.7) for s in shadows])
    n = 20_000
    points, owners = sample_mosaic_with_leaves(tree, n, seed=11)
    records = leaves(tree)
    for index in range(len(records)):
        assert contains_points(records[index].region, points[owners == index]).all()
    expected = pmf(tree).as_array(len(records)) * n
    observed = np.bincount(owners, minlength=len(records))
    assert chisquare(observed, expected).pvalue > 1e-3


def test_sampling_is_reproducible(illustrative):
    aoi, shadows = illustrative
    tree = build_tree(aoi, [(s, 0.4) for s in shadows])
    assert np.array_equal(sample_mosaic(tree, 500, seed=3), sample_mosaic(tree, 500, seed=3))
    assert sample_mosaic(tree, 0, seed=3).shape == (0, 2)


def test_expected_mosaic_uses_truth_designations(illustrative):
    aoi, shadows = illustrative
    # Truth inside S1 (and so inside S3), outside S2
    tree = expected_mosaic(aoi, shadows, (12, 12), posterior=0.9)
    truth_leaf = next(r for r in leaves(tree) if r.labels == (("S1", Visibility.NLOS),))
    assert truth_leaf.mass == pytest.approx(0.9 * 0.9 * 0.9)
    assert max(r.mass for r in leaves(tree)) == truth_leaf.mass


def test_expected_mosaic_with_asymmetric_rates(illustrative):
    aoi, shadows = illustrative
    tree = expected_mosaic(aoi, shadows, (12, 12), posterior=0.9, tnr=0.6)
    truth_leaf = next(r for r in leaves(tree) if r.labels == (("S1", Visibility.NLOS),))
    # NLOS satellites S1 and S3 report 1 - tnr = 0.4 LOS, LOS satellite S2 reports 0.9
    assert truth_leaf.mass == pytest.approx(0.6 * 0.9 * 0.6)


def test_pair_leaves_rejects_different_sets():
    a = leaves(build_tree(Aoi(region=PolyRegion.box(0, 0, 4, 4)), []))
    b = leaves(build_tree(Aoi(region=PolyRegion.box(0, 0, 4, 4)), [
        (ShadowRegion("G1", PolyRegion.box(0, 0, 2, 4)), 0.5),
    ]))
    assert pair_leaves(a, b, area_tol=1e-6) is None
