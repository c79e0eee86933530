#!/usr/bin/env python3
"""
Tests for periodic coefficients, defect profiles and the perturbed-coefficient diagnostics
"""

import math
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from scipy.integrate import quad

from coefficient_builder import (
    ConstantCoefficient, DefectProfile, PeriodicCoefficient, PerturbedCoefficient, ScaledCoefficient,
    average_decay, cell_norm, cell_norm_table, coefficient_average_decay, ellipticity_floor,
    eval_coefficient, holder_quotient, tail_uniform,
)
from defect_geometry import DefectPointSet
from lab_errors import ConfigError, EllipticityError


def _bump(z, rho=0.5):
    t = abs(z) / rho
    return math.exp(1.0 - 1.0 / (1.0 - t * t)) if t < 1.0 else 0.0


@pytest.fixture(scope='module')
def bump_line():
    point_set = DefectPointSet(1, index_bound=24)
    return PerturbedCoefficient(PeriodicCoefficient(1, 'constant', 1.0), DefectProfile(1, 'bump', 1.0, rho=0.5),
                                point_set)


def test_zero_amplitude_is_periodic():
    periodic = PeriodicCoefficient(1, 'sin1d')
    coef = PerturbedCoefficient(periodic, DefectProfile(1, 'bump', 0.0), DefectPointSet(1, index_bound=8))
    x = np.linspace(-20.0, 20.0, 101)
    assert np.array_equal(coef.evaluate(x), periodic.evaluate(x))
    assert not coef.has_defects


def test_eval_at_defect_centre(bump_line):
    assert eval_coefficient(bump_line, [2.0])[0, 0] == pytest.approx(2.0)
    assert eval_coefficient(bump_line, [3.0])[0, 0] == 1.0
    assert eval_coefficient(bump_line, [0.0])[0, 0] == pytest.approx(2.0)


def test_periodic_part_is_periodic():
    for d, preset in [(1, 'sin1d'), (2, 'laminate2d'), (2, 'product_cos'), (3, 'checker3d')]:
        periodic = PeriodicCoefficient(d, preset)
        x = np.linspace(-1.3, 2.1, 7 * d).reshape(-1, d)
        for i in range(d):
            shifted = x + np.eye(d)[i]
            assert np.allclose(periodic.evaluate(shifted), periodic.evaluate(x), rtol=0, atol=1e-12)


def test_preset_dimension_check():
    with pytest.raises(ConfigError):
        PeriodicCoefficient(3, 'laminate2d')
    with pytest.raises(ConfigError):
        PeriodicCoefficient(2, 'unknown')


def test_profile_validation():
    with pytest.raises(ConfigError):
        DefectProfile(1, 'bump', 1.0, rho=0.6)
    with pytest.raises(ConfigError):
        DefectProfile(1, 'algebraic', 1.0, beta=2.0)
    with pytest.raises(ConfigError):
        DefectProfile(2, 'bump', [[1.0, 2.0], [0.0, 1.0]])


def test_lr_membership():
    assert DefectProfile(2, 'bump').lr_membership(1.5)
    assert DefectProfile(1, 'algebraic', beta=2.0, r_cut=64.0).lr_membership(2.0)
    assert not DefectProfile(1, 'algebraic', beta=0.4, r_cut=64.0).lr_membership(2.0)
    assert not DefectProfile(3, 'algebraic', beta=1.0, r_cut=64.0).lr_membership(2.0)


def test_amplitude_modulation():
    coef = PerturbedCoefficient(PeriodicCoefficient(1, 'constant'), DefectProfile(1, 'bump', 1.0),
                                DefectPointSet(1, index_bound=8), modulation=1.0)
    assert coef.defect_part(np.array([4.0]))[0, 0, 0] == pytest.approx(1.25)
    assert coef.defect_part(np.array([0.0]))[0, 0, 0] == pytest.approx(2.0)
    # the limit profile carries no modulation
    assert coef.limit_profile_at((2,))(np.array([4.0]))[0, 0, 0] == pytest.approx(1.0)


def test_ellipticity_violation():
    coef = PerturbedCoefficient(PeriodicCoefficient(1, 'constant'), DefectProfile(1, 'bump', -2.0),
                                DefectPointSet(1, index_bound=8))
    with pytest.raises(EllipticityError):
        eval_coefficient(coef, [4.0])
    with pytest.raises(EllipticityError):
        ellipticity_floor(coef, index_bound=4)


def test_ellipticity_floor_closed_forms():
    sin = PerturbedCoefficient(PeriodicCoefficient(1, 'sin1d'))
    assert ellipticity_floor(sin, sample_density=64) == pytest.approx(1.0, abs=1e-9)
    assert sin.lambda_check == pytest.approx(1.0, abs=1e-9)

    laminate = PerturbedCoefficient(PeriodicCoefficient(2, 'laminate2d'))
    assert ellipticity_floor(laminate, sample_density=64) == pytest.approx(1.0, abs=1e-9)

    bumped = PerturbedCoefficient(PeriodicCoefficient(2, 'constant'), DefectProfile(2, 'bump', 0.5),
                                  DefectPointSet(2, index_bound=6))
    assert ellipticity_floor(bumped, sample_density=8, index_bound=3) >= 1.0


def test_ellipticity_floor_leaves_the_check_in_place():
    # a dips to 0.5 at every defect, below the configured floor of 0.9
    coef = PerturbedCoefficient(PeriodicCoefficient(1, 'constant'), DefectProfile(1, 'bump', -0.5),
                                DefectPointSet(1, index_bound=8), lambda_min=0.9)
    center = coef.point_set.point_of((2,))
    assert coef.evaluate(center, floor=0.4)[0, 0, 0] == pytest.approx(0.5)

    def measure(_):
        return ellipticity_floor(coef, index_bound=6)

    def check(_):
        with pytest.raises(EllipticityError):
            coef.evaluate(center)
        return True

    with ThreadPoolExecutor(max_workers=4) as pool:
        floors = [pool.submit(measure, i) for i in range(4)]
        checks = [pool.submit(check, i) for i in range(64)]
        assert all(f.result() == pytest.approx(0.5) for f in floors)
        assert all(c.result() for c in checks)
    assert coef.lambda_min == 0.9
    assert coef.lambda_check == pytest.approx(0.5)


def test_cell_norm_single_bump(bump_line):
    exact = math.sqrt(quad(lambda z: _bump(z) ** 2, -0.5, 0.5, epsabs=1e-13)[0])
    center = bump_line.point_set.point_of((3,))
    measured = cell_norm(bump_line.defect_part, bump_line.point_set, (3,), 2.0, 1e-3,
                         region=(center - 0.5, center + 0.5))
    assert measured == pytest.approx(exact, abs=1e-6)


def test_cell_norm_of_zero(bump_line):
    zero = lambda x: np.zeros(len(x))
    assert cell_norm(zero, bump_line.point_set, (2,), 2.0, 0.01) == 0.0
    with pytest.raises(ConfigError):
        cell_norm(zero, bump_line.point_set, (2,), 1.0, 0.01)


def test_cell_norm_table_identical_copies(bump_line):
    table = cell_norm_table(bump_line, [(1,), (2,), (-3,), (5,)], r_values=(2.0, 3.0), resolution=0.005)
    assert list(table.columns) == ['index', 'r', 'cell_norm', 'residual_norm']
    assert (table['cell_norm'] >= 0).all()
    assert np.allclose(table['residual_norm'], 0.0)
    for r, group in table.groupby('r'):
        assert group['cell_norm'].max() - group['cell_norm'].min() < 1e-9


def test_average_decay_of_zero():
    result = average_decay(lambda x: np.zeros(len(x)), [0.0], [1.0, 2.0, 4.0], 0.1)
    assert (result['table']['mean'] == 0).all()
    with pytest.raises(ConfigError):
        average_decay(lambda x: np.zeros(len(x)), [0.0], [4.0, 2.0], 0.1)


def test_average_decay_line(bump_line):
    radii = [2.0 ** k for k in range(4, 19)]
    result = coefficient_average_decay(bump_line, [0.0], radii, resolution=0.01)
    assert list(result['table'].columns) == ['R', 'mean', 'bound_ratio']
    assert result['slope'] < -0.5
    assert result['bound_constant'] < 2.0
    ratios = result['table']['bound_ratio'].to_numpy()
    assert ratios[-1] <= ratios[0]


def test_average_decay_plane():
    coef = PerturbedCoefficient(PeriodicCoefficient(2, 'constant'), DefectProfile(2, 'bump', 1.0),
                                DefectPointSet(2, index_bound=14))
    result = coefficient_average_decay(coef, [0.0, 0.0], [16.0, 64.0, 256.0, 1024.0], resolution=0.02)
    assert result['slope'] < -1.0
    assert np.isfinite(result['bound_constant'])


def test_tail_uniform(bump_line):
    values = [tail_uniform(bump_line, R, 4, resolution=1e-4) for R in (0.1, 0.2, 0.3)]
    assert values[0] >= values[1] >= values[2] > 0
    assert tail_uniform(bump_line, 0.6, 4, resolution=1e-3) == 0.0
    exact = math.sqrt(2.0 * quad(lambda z: _bump(z) ** 2, 0.2, 0.5, epsabs=1e-13)[0])
    assert values[1] == pytest.approx(exact, rel=1e-2)


def test_holder_quotient():
    coef = PerturbedCoefficient(PeriodicCoefficient(2, 'product_cos'))
    quotient = holder_quotient(coef, 1.0, spacing=1e-4, samples_per_axis=11)
    # both diagonal entries move together; each has Lipschitz constant at most 2 pi * 3
    assert 0 < quotient <= math.sqrt(2.0) * 2 * math.pi * 3 + 1e-3
    with pytest.raises(ConfigError):
        holder_quotient(coef, 0.0)


def test_constant_and_scaled_coefficients():
    constant = ConstantCoefficient([[2.0, 0.5], [0.5, 1.0]])
    assert not constant.is_diagonal
    assert constant.evaluate(np.zeros((3, 2))).shape == (3, 2, 2)
    with pytest.raises(ConfigError):
        ConstantCoefficient([[1.0, 0.2], [0.0, 1.0]])

    periodic = PeriodicCoefficient(1, 'sin1d')
    scaled = ScaledCoefficient(periodic, 0.125)
    x = np.linspace(0.0, 1.0, 17)
    assert np.allclose(scaled.diagonal(x), periodic.diagonal(x / 0.125))


def test_coefficient_hash(bump_line):
    again = PerturbedCoefficient(PeriodicCoefficient(1, 'constant', 1.0), DefectProfile(1, 'bump', 1.0, rho=0.5),
                                 DefectPointSet(1, index_bound=24))
    other = PerturbedCoefficient(PeriodicCoefficient(1, 'constant', 1.0), DefectProfile(1, 'bump', 0.5, rho=0.5),
                                 DefectPointSet(1, index_bound=24))
    assert bump_line.coefficient_hash() == again.coefficient_hash()
    assert bump_line.coefficient_hash() != other.coefficient_hash()
    assert len(bump_line.coefficient_hash()) == 64


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, '-v']))
