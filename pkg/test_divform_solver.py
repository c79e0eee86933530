#!/usr/bin/env python3
"""
Tests for the divergence-form discretization, the CG solver, the spectral
Poisson solves, norms and field dumps
"""

import math
import sys

import numpy as np
import pytest

from coefficient_builder import ConstantCoefficient, DefectProfile, PeriodicCoefficient, PerturbedCoefficient
from defect_geometry import SingleDefectSet
from divform_solver import (
    DIRICHLET, FIELD_HEADER, PERIODIC, GridField, SolverConfig, UniformGrid, assemble_divform,
    assemble_rhs_div, gradient_energy, norms_and_gradient, poisson_dirichlet_spectral,
    poisson_periodic_spectral, read_field, sample_source, solve, write_field,
)
from lab_errors import ConfigError, ConvergenceError, EllipticityError, GridAlignmentError


def _identity(d):
    return ConstantCoefficient(np.eye(d))


def _full_tensor_coefficient():
    """Variable, non-diagonal coefficient on [-1, 1]^2"""
    profile = DefectProfile(2, 'bump', [[0.5, 0.2], [0.2, 0.5]], rho=0.5)
    return PerturbedCoefficient(PeriodicCoefficient(2, 'product_cos'), profile, SingleDefectSet(2))


def _wave(grid):
    """Deterministic test vector on the unknowns"""
    points = grid.unknown_points()
    return np.sin(3.0 * points.sum(axis=1)) + np.cos(5.0 * points[:, 0])


def test_grid_shapes():
    grid = UniformGrid(2, 8)
    assert grid.node_shape == (9, 9)
    assert grid.unknown_shape == (7, 7)
    assert grid.face_shape(0) == (8, 9)
    assert grid.cell_shape == (8, 8)
    periodic = UniformGrid(2, 8, bc=PERIODIC)
    assert periodic.node_shape == (8, 8)
    assert periodic.face_shape(1) == (8, 8)
    with pytest.raises(ConfigError):
        UniformGrid(2, 3)
    with pytest.raises(GridAlignmentError):
        grid.index_of(0.3)


def test_tridiagonal_stencil():
    grid = UniformGrid(1, 8)
    system = assemble_divform(_identity(1), grid)
    expected = 2.0 * np.eye(7) - np.eye(7, k=1) - np.eye(7, k=-1)
    assert np.allclose(system.matrix.toarray() * grid.h ** 2, expected, rtol=0, atol=1e-12)


def test_periodic_row_sums_vanish():
    grid = UniformGrid(2, 8, bc=PERIODIC)
    system = assemble_divform(PeriodicCoefficient(2, 'product_cos'), grid)
    scale = np.abs(system.matrix).max()
    assert np.abs(np.asarray(system.matrix.sum(axis=1))).max() <= 1e-12 * scale


def test_operator_is_exactly_symmetric():
    grid = UniformGrid(2, 16, -1.0, 1.0)
    system = assemble_divform(_full_tensor_coefficient(), grid)
    assert not system.is_diagonal
    assert (system.matrix != system.matrix.T).nnz == 0


def test_summation_by_parts():
    grid = UniformGrid(2, 16, -1.0, 1.0)
    system = assemble_divform(_full_tensor_coefficient(), grid)
    u = _wave(grid)
    v = np.cos(2.0 * grid.unknown_points()[:, 1])
    faces, cells = system.flux(u)
    pairing = sum(faces[k] @ (grid.face_difference(k) @ v) / grid.h for k in range(2))
    pairing += sum(cells[k] @ (grid.cell_difference(k) @ v) / grid.h for k in range(2))
    assert (system.matrix @ u) @ v == pytest.approx(pairing, rel=1e-10)
    # the discrete divergence of the flux is minus the operator
    rhs = assemble_rhs_div(faces, grid, cells)
    assert np.allclose(rhs, -(system.matrix @ u), rtol=0, atol=1e-9 * np.abs(rhs).max())


def test_rhs_of_constant_field_periodic():
    grid = UniformGrid(2, 8, bc=PERIODIC)
    faces = [np.full(grid.face_shape(k), 2.5).ravel() for k in range(2)]
    assert np.allclose(assemble_rhs_div(faces, grid), 0.0)


def test_rhs_locality():
    grid = UniformGrid(1, 16)
    g = np.zeros(16)
    g[5] = 1.0
    rhs = assemble_rhs_div([g], grid)
    assert set(np.nonzero(rhs)[0]) == {4, 5}


def test_energy_positivity():
    grid = UniformGrid(2, 16)
    system = assemble_divform(PeriodicCoefficient(2, 'product_cos'), grid)
    u = _wave(grid)
    assert system.energy(u) >= 1.0 * gradient_energy(grid, u) * (1.0 - 1e-12)


def test_ellipticity_violation_at_assembly():
    coef = PerturbedCoefficient(PeriodicCoefficient(1, 'constant'), DefectProfile(1, 'bump', -2.0),
                                SingleDefectSet(1), lambda_min=-math.inf)
    with pytest.raises(EllipticityError):
        assemble_divform(coef, UniformGrid(1, 16, -1.0, 1.0))


def test_zero_rhs():
    grid = UniformGrid(2, 8)
    result = solve(assemble_divform(_identity(2), grid), np.zeros(grid.num_unknowns))
    assert result.iterations == 0
    assert np.all(result.field.values == 0.0)


def test_quadratic_solution_is_exact():
    # the three-point stencil is exact on quadratics: -u'' = 1 gives x (1 - x) / 2
    grid = UniformGrid(1, 64)
    result = solve(assemble_divform(_identity(1), grid), sample_source(grid, 1.0), SolverConfig(rel_tol=1e-12))
    x = grid.axis_nodes()
    assert np.abs(result.field.values - 0.5 * x * (1.0 - x)).max() < 1e-8
    assert result.residual <= 1e-11


def _eigenvalue_floor(system):
    """Lower bound on the smallest eigenvalue of A (on mean-zero vectors when periodic)"""
    grid = system.grid
    coefficient_floor = min(float(np.min(c)) for c in system.face_coefficients)
    if grid.periodic:
        mode = 4.0 * math.sin(math.pi / grid.n) ** 2 / grid.h ** 2
    else:
        mode = grid.d * 4.0 * math.sin(math.pi / (2 * grid.n)) ** 2 / grid.h ** 2
    return coefficient_floor * mode


def test_preconditioners_agree():
    rel_tol = 1e-10
    grid = UniformGrid(2, 32)
    system = assemble_divform(PeriodicCoefficient(2, 'product_cos'), grid)
    rhs = sample_source(grid, 1.0)
    multigrid = solve(system, rhs, SolverConfig(rel_tol=rel_tol, preconditioner='multigrid'))
    jacobi = solve(system, rhs, SolverConfig(rel_tol=rel_tol, preconditioner='jacobi'))
    gap = multigrid.field.unknowns() - jacobi.field.unknowns()
    norm_b = np.linalg.norm(rhs)
    assert np.linalg.norm(system.matrix @ gap) <= 10 * rel_tol * norm_b
    assert np.linalg.norm(gap) <= 10 * rel_tol * norm_b / _eigenvalue_floor(system)
    assert multigrid.iterations < jacobi.iterations


@pytest.mark.parametrize('bc', [PERIODIC, DIRICHLET])
def test_spectral_and_cg_agree(bc):
    rel_tol = 1e-10
    grid = UniformGrid(2, 32, bc=bc)
    system = assemble_divform(_identity(2), grid)
    rhs = GridField.from_function(grid, lambda x: np.sin(2 * np.pi * x[:, 0]) * np.exp(x[:, 1]))
    if grid.periodic:
        rhs = GridField(grid, rhs.values - rhs.values.mean())
        spectral = poisson_periodic_spectral(rhs)
    else:
        spectral = poisson_dirichlet_spectral(rhs)
    iterative = solve(system, rhs.unknowns(), SolverConfig(rel_tol=rel_tol))
    gap = spectral.unknowns() - iterative.field.unknowns()
    norm_b = np.linalg.norm(rhs.unknowns())
    assert np.linalg.norm(system.matrix @ gap) <= 10 * rel_tol * norm_b
    assert np.linalg.norm(gap) <= 10 * rel_tol * norm_b / _eigenvalue_floor(system)


def test_convergence_error_reports_residual():
    grid = UniformGrid(2, 32)
    system = assemble_divform(_identity(2), grid)
    with pytest.raises(ConvergenceError) as caught:
        solve(system, sample_source(grid, 1.0), SolverConfig(max_iter=1, preconditioner='jacobi'))
    assert caught.value.best_residual > 0
    assert caught.value.iterations == 1


def test_periodic_projection_and_mean():
    grid = UniformGrid(2, 16, bc=PERIODIC)
    system = assemble_divform(PeriodicCoefficient(2, 'product_cos'), grid)
    constant = solve(system, np.ones(grid.num_unknowns))
    assert constant.projection == pytest.approx(1.0)
    assert constant.iterations == 0

    points = grid.unknown_points()
    result = solve(system, np.sin(2 * np.pi * points[:, 0]) + 0.3)
    assert result.projection == pytest.approx(0.3)
    assert abs(result.field.mean()) < 1e-12


@pytest.mark.parametrize('d, sizes', [(1, (16, 32, 64)), (2, (16, 32, 64)), (3, (8, 16, 32))])
def test_manufactured_order(d, sizes):
    exact = lambda x: np.prod(np.sin(2 * np.pi * x), axis=1)
    source = lambda x: d * 4 * np.pi ** 2 * exact(x)
    errors = []
    for n in sizes:
        grid = UniformGrid(d, n)
        result = solve(assemble_divform(_identity(d), grid), sample_source(grid, source), SolverConfig(rel_tol=1e-11))
        error = GridField(grid, result.field.values - exact(grid.nodes()).reshape(grid.node_shape))
        errors.append(norms_and_gradient(error).l2)
    order = math.log2(errors[-2] / errors[-1])
    assert order == pytest.approx(2.0, abs=0.1)


def test_variable_coefficient_order_1d():
    # -( (2 + sin 2 pi x) u' )' with u = sin(pi x)
    a = lambda x: 2.0 + np.sin(2 * np.pi * x)
    source = lambda x: (-(2 * np.pi * np.cos(2 * np.pi * x[:, 0])) * np.pi * np.cos(np.pi * x[:, 0])
                        + a(x[:, 0]) * np.pi ** 2 * np.sin(np.pi * x[:, 0]))
    errors = []
    for n in (32, 64, 128):
        grid = UniformGrid(1, n)
        result = solve(assemble_divform(PeriodicCoefficient(1, 'sin1d'), grid), sample_source(grid, source),
                       SolverConfig(rel_tol=1e-12))
        error = GridField(grid, result.field.values - np.sin(np.pi * grid.axis_nodes()))
        errors.append(norms_and_gradient(error).l2)
    assert math.log2(errors[1] / errors[2]) == pytest.approx(2.0, abs=0.1)


def test_periodic_spectral_solve():
    grid = UniformGrid(2, 16, bc=PERIODIC)
    assert np.all(poisson_periodic_spectral(GridField.zeros(grid)).values == 0.0)

    rhs = GridField.from_function(grid, lambda x: np.sin(2 * np.pi * x[:, 0]))
    solution = poisson_periodic_spectral(rhs)
    symbol = 4.0 * math.sin(math.pi / 16) ** 2 / grid.h ** 2
    assert np.allclose(solution.values, rhs.values / symbol, rtol=0, atol=1e-12)

    system = assemble_divform(_identity(2), grid)
    assert np.allclose(system.matrix @ solution.unknowns(), rhs.unknowns(), rtol=0, atol=1e-10)
    iterative = solve(system, rhs.unknowns(), SolverConfig(rel_tol=1e-11))
    assert np.allclose(iterative.field.values, solution.values, rtol=0, atol=1e-8)


def test_dirichlet_spectral_solve():
    grid = UniformGrid(2, 16)
    rhs = GridField.from_function(grid, lambda x: np.exp(x[:, 0]) * x[:, 1])
    solution = poisson_dirichlet_spectral(rhs)
    system = assemble_divform(_identity(2), grid)
    assert np.allclose(system.matrix @ solution.unknowns(), rhs.unknowns(), rtol=0, atol=1e-10)
    with pytest.raises(ConfigError):
        poisson_dirichlet_spectral(GridField.zeros(UniformGrid(2, 8, bc=PERIODIC)))


def test_norms():
    periodic = UniformGrid(2, 8, bc=PERIODIC)
    assert norms_and_gradient(GridField(periodic, np.full(periodic.node_shape, 3.0))).h1_seminorm == 0.0

    line = UniformGrid(1, 64)
    wave = GridField.from_function(line, lambda x: np.sin(2 * np.pi * x[:, 0]))
    assert norms_and_gradient(wave).l2 == pytest.approx(1.0 / math.sqrt(2.0), abs=2e-3)

    grid = UniformGrid(2, 8)
    linear = GridField(grid, (3.0 * grid.nodes()[:, 0] + 2.0 * grid.nodes()[:, 1]).reshape(grid.node_shape))
    report = norms_and_gradient(linear, (0.25, 0.75))
    assert np.allclose(report.gradient[0], 3.0)
    assert np.allclose(report.gradient[1], 2.0)
    assert report.h1_seminorm == pytest.approx(math.sqrt(13.0) * 0.5)
    with pytest.raises(GridAlignmentError):
        norms_and_gradient(linear, (0.3, 0.7))


def test_field_dump(tmp_path):
    grid = UniformGrid(2, 8, bc=PERIODIC)
    field = GridField.from_function(grid, lambda x: x[:, 0] - 2 * x[:, 1])
    path = write_field(tmp_path / 'w.hmf', field)
    raw = path.read_bytes()
    assert FIELD_HEADER.itemsize == 32
    assert raw[:4] == b'HMLF'
    assert len(raw) == 32 + 8 * field.values.size
    loaded = read_field(path)
    assert loaded.grid.bc == PERIODIC and loaded.grid.n == 8
    assert (loaded.grid.lo, loaded.grid.hi) == (0.0, 1.0)
    assert np.array_equal(loaded.values, field.values)


def test_field_dump_keeps_the_box(tmp_path):
    box = UniformGrid(2, 64, -4.0, 4.0)
    field = GridField.from_function(box, lambda x: np.exp(-np.sum(x ** 2, axis=1)))
    loaded = read_field(write_field(tmp_path / 'w_tilde_0.hmf', field))
    assert loaded.grid.bc == DIRICHLET and loaded.grid.n == 64
    assert (loaded.grid.lo, loaded.grid.hi) == (-4.0, 4.0)
    assert loaded.grid.h == box.h
    assert np.array_equal(loaded.grid.nodes(), box.nodes())
    assert np.array_equal(loaded.values, field.values)
    with pytest.raises(ConfigError):
        write_field(tmp_path / 'big.hmf', GridField.zeros(UniformGrid(4, 4)))


def test_solver_config_validation():
    with pytest.raises(ConfigError):
        SolverConfig(rel_tol=1e-2)
    with pytest.raises(ConfigError):
        SolverConfig(preconditioner='ilu')


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, '-v']))
