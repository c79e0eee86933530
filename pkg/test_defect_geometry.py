#!/usr/bin/env python3
"""
Tests for the dyadic defect set, its Voronoi cells and the assumption certificate
"""

import math
import sys

import numpy as np
import pytest

from defect_geometry import (
    DefectPointSet, SingleDefectSet, ball_samples, box_samples, cell_count_fit, cell_volume_bounds,
    certify_assumptions, dilated_separation, enumerate_indices, exhaustion_check, in_index_set, inclusion_box,
    injectivity_check, norm_bounds_check,
)
from lab_errors import CertificationError, ConfigError


@pytest.fixture(scope='module')
def line_set():
    return DefectPointSet(1, c0=2.0, index_bound=12)


@pytest.fixture(scope='module')
def plane_set():
    return DefectPointSet(2, c0=2.0, index_bound=12)


def test_index_membership():
    assert in_index_set((4, 2), 2.0)
    assert not in_index_set((4, 1), 2.0)
    assert in_index_set((5, 0), 2.0)
    assert in_index_set((0, 0), 2.0)
    assert in_index_set((-4, 3), 2.0)


def test_point_of(plane_set):
    assert np.array_equal(plane_set.point_of((3, 2)), [8.0, 4.0])
    norm = np.linalg.norm(plane_set.point_of((3, 2)))
    assert 8.0 <= norm <= 8.0 * math.sqrt(2.0)
    assert np.array_equal(plane_set.point_of((-1, 1)), [-2.0, 2.0])
    assert np.array_equal(DefectPointSet(1, index_bound=4).point_of((0,)), [0.0])
    with pytest.raises(ConfigError):
        plane_set.point_of((4, 1))


def test_enumeration_order(plane_set):
    norms = plane_set.max_norms
    assert np.all(np.diff(norms) >= 0)
    assert tuple(plane_set.indices[0]) == (0, 0)
    assert plane_set.rank_of((0, 0)) == 0
    assert injectivity_check(plane_set)
    assert norm_bounds_check(plane_set)


def test_generator_interface(plane_set):
    indices, points = enumerate_indices(plane_set)
    assert indices is plane_set.indices and points is plane_set.points
    assert plane_set.nearest([7.0, 5.0]) == plane_set.nearest_defect([7.0, 5.0])
    single = SingleDefectSet(2)
    assert single.nearest([3.0, 4.0]) == ((0, 0), 5.0)
    assert enumerate_indices(single)[0].shape == (1, 2)


def test_nearest_defect_line(line_set):
    assert line_set.nearest_defect([2.0]) == ((1,), 0.0)
    index, distance = line_set.nearest_defect([3.0])
    assert index == (1,) and distance == 1.0
    index, distance = line_set.nearest_defect([100.0])
    assert index == (7,) and distance == 28.0


def test_nearest_defect_beyond_bound(line_set):
    with pytest.raises(CertificationError):
        line_set.nearest_defect([2.0 ** 14])


def test_dilated_cell(line_set):
    assert line_set.in_dilated_cell((2,), np.array([[4.0]]))[0]
    assert line_set.in_dilated_cell((2,), np.array([[5.5]]))[0]
    assert not line_set.in_dilated_cell((2,), np.array([[40.0]]))[0]


def test_cells_partition_samples(plane_set):
    samples = box_samples(np.array([-50.0, -50.0]), np.array([50.0, 50.0]), 2000)
    ranks, distances = plane_set.nearest_batch(samples)
    assert ranks.shape == (len(samples),)
    # the nearest distance is a true minimum over the enumeration
    brute = np.min(np.linalg.norm(samples[:, None, :] - plane_set.points[None, :, :], axis=2), axis=1)
    assert np.allclose(distances, brute)


def test_voronoi_cell_inside_dilated_cell(plane_set):
    p = (3, 2)
    center = plane_set.point_of(p)
    cloud = ball_samples(center, 3.0, 500)
    ranks, _ = plane_set.nearest_batch(cloud)
    mine = cloud[ranks == plane_set.rank_of(p)]
    assert len(mine) > 0
    assert np.all(plane_set.in_dilated_cell(p, mine))


def test_annulus_counts(line_set, plane_set):
    assert line_set.count_in_annulus(5) == 2
    assert line_set.count_in_annulus(0) == 0
    with pytest.raises(CertificationError):
        plane_set.count_in_annulus(13)


def test_annulus_counts_match_enumeration():
    point_set = DefectPointSet(2, c0=2.0, index_bound=16)
    _, points = enumerate_indices(point_set)
    squared = np.sum(points ** 2, axis=1)
    counts = []
    for n in range(4, 17):
        enumerated = int(np.count_nonzero((squared >= 4.0 ** n) & (squared < 4.0 ** (n + 1))))
        assert point_set.count_in_annulus(n) == enumerated
        counts.append(enumerated)
    # max-norm n with the other entry in {0, +-(n-2), +-(n-1), +-n}
    assert counts == [24] * len(counts)


def test_cells_intersecting_ball(line_set):
    assert line_set.cells_intersecting_ball([0.0], 0.5) == [(0,)]
    small = line_set.cells_intersecting_ball([0.0], 2.0 ** 6)
    large = line_set.cells_intersecting_ball([0.0], 2.0 ** 10)
    assert set(small) <= set(large)
    assert len(large) <= 4 * 10


def test_cell_count_log_fit():
    point_set = DefectPointSet(2, c0=2.0, index_bound=24)
    fit = cell_count_fit(point_set, list(range(4, 21)), boundary_samples=1024)
    assert all(b >= a for a, b in zip(fit['counts'], fit['counts'][1:]))
    assert fit['r2'] >= 0.9
    assert fit['slope'] > 0


def test_inclusion_box():
    lo, hi = inclusion_box((3, 2))
    assert np.array_equal(lo, [4.0, 2.0])
    assert np.array_equal(hi, [16.0, 16.0])


def test_interval_cell_is_exact(line_set):
    lo, hi, how = line_set.cell_bounding_box((3,))
    assert how == 'exact'
    assert lo[0] == 6.0 and hi[0] == 12.0


def test_certificate_small_bound():
    point_set = DefectPointSet(2, c0=2.0, index_bound=6)
    certificate = certify_assumptions(point_set, 6, samples_per_cell=32, fit_exponents=[4, 5, 6, 7, 8])
    assert certificate.h2_ratio_min >= 1.0
    assert certificate.h2_ratio_max <= (1.0 + math.sqrt(2.0)) * 2.0 ** 3
    assert certificate.inclusion_violations == 0
    assert certificate.inclusion_samples > 0
    assert certificate.injective and certificate.norm_bounds_ok
    assert certificate.dilated_separation_min > 0
    assert set(certificate.to_dict()) >= {'h2_ratio_min', 'h2_ratio_max', 'h3_ratio_max',
                                          'annulus_counts', 'cell_count_fit', 'inclusion_violations'}


def test_certificate_needs_bound():
    with pytest.raises(ConfigError):
        certify_assumptions(DefectPointSet(2, index_bound=6), 3)


def test_cell_volume_bounds_line():
    table = cell_volume_bounds(DefectPointSet(1, index_bound=6), 6)
    assert len(table) == 12
    assert table['within_bounds'].all()
    # the cell of x=2 is [1, 3]
    row = table[table['index'] == '1'].iloc[0]
    assert row['diameter_power'] == pytest.approx(2.0)
    assert row['volume'] == pytest.approx(2.0, rel=0.1)


def test_dilated_separation_line():
    # the widest reach is from 2^n toward 2^(n-1): 0.125 |x_p|
    c = dilated_separation(DefectPointSet(1, index_bound=6), 6)
    assert 0.124 < c < 0.2
    with pytest.raises(ConfigError):
        dilated_separation(DefectPointSet(1, index_bound=6), 0)


@pytest.mark.slow
def test_certificate_desk_scale():
    point_set = DefectPointSet(2, c0=2.0, index_bound=16)
    certificate = certify_assumptions(point_set, 16, samples_per_cell=1024, max_samples_per_cell=65536)
    assert certificate.h2_ratio_min >= 1.0
    assert certificate.h2_ratio_max <= 11.7
    assert certificate.inclusion_violations == 0
    assert certificate.inclusion_samples >= 100_000
    assert certificate.cell_count_fit['r2'] >= 0.9


def test_exhaustion_line():
    result = exhaustion_check(DefectPointSet(1, index_bound=12), 0, 8)
    assert result['passed']
    assert result['nested']
    assert result['box_from'] is not None


def test_exhaustion_plane():
    result = exhaustion_check(DefectPointSet(2, index_bound=12), 0, 10, n_min=3, samples=128)
    assert all(result['contained'])
    assert result['nested']


def test_exhaustion_rejects_short_sequence(line_set):
    with pytest.raises(ConfigError):
        exhaustion_check(line_set, 0, 1)


def test_single_defect_set():
    single = SingleDefectSet(3)
    ranks, distances = single.nearest_batch(np.array([[1.0, 2.0, 2.0]]))
    assert ranks[0] == 0 and distances[0] == 3.0
    assert len(single.points_within(np.full(3, -1.0), np.full(3, 1.0), 0.5)) == 1
    with pytest.raises(ConfigError):
        single.point_of((1, 0, 0))


def test_invalid_parameters():
    with pytest.raises(ConfigError):
        DefectPointSet(2, c0=1.0)
    with pytest.raises(ConfigError):
        DefectPointSet(0)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, '-v']))
