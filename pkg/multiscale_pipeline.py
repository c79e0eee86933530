"""
Multiscale Pipeline
Oscillatory and homogenized Dirichlet solves on the unit cube, the first-order
two-scale expansion, remainder norms with rate fits, and the flux-average
estimate of the effective tensor over growing boxes
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Tuple, Any, Optional, Callable, Sequence

import numpy as np
import pandas as pd
from scipy.interpolate import RegularGridInterpolator

from coefficient_builder import ConstantCoefficient, PerturbedCoefficient, ScaledCoefficient
from corrector_solver import (
    PeriodicCorrector, PerturbedCorrector, PotentialField, box_flux, build_M, homogenized_tensor,
    solve_periodic_correctors, solve_perturbed_corrector, solve_potential,
)
from divform_solver import (
    DIRICHLET, PERIODIC, GridField, SolverConfig, UniformGrid, assemble_divform,
    norms_and_gradient, sample_source, solve,
)
from lab_errors import ConfigError, ResolutionError
from rate_fitting import expected_exponents, fit_loglog
import logging

logger = logging.getLogger(__name__)

__all__ = [
    'MultiscaleProblem', 'ConvergenceReport', 'solve_oscillatory', 'solve_homogenized',
    'first_order_expansion', 'remainder_study', 'flux_average_tensor', 'expected_exponents',
]


def _unit_source(x: np.ndarray) -> np.ndarray:
    return np.ones(x.shape[0])


@dataclass
class MultiscaleProblem:
    """
    -div(a(x/eps) grad u) = f on (0, 1)^d, u = 0 on the boundary. The grid for
    eps has nodes_per_period / eps intervals; correctors use nodes_per_period
    cells per unit so x/eps lands on corrector nodes.
    """
    coefficient: PerturbedCoefficient
    eps_list: Sequence[float]
    source: Callable[[np.ndarray], np.ndarray] = _unit_source
    interior: Tuple[float, float] = (0.25, 0.75)
    nodes_per_period: int = 16
    solver: SolverConfig = field(default_factory=SolverConfig)
    include_perturbed: bool = True
    compute_h_norm: bool = True
    check_refinement: bool = False
    admission_tolerance: float = 0.05
    workers: int = 1

    def __post_init__(self):
        lo, hi = self.interior
        if not 0.0 < lo < hi < 1.0:
            raise ConfigError(f"interior box [{lo}, {hi}] must lie strictly inside (0, 1)")
        if self.nodes_per_period < 16 or self.nodes_per_period % 2:
            raise ConfigError(f"nodes_per_period must be even and >= 16, got {self.nodes_per_period}")
        for eps in self.eps_list:
            self.intervals(eps)

    @property
    def d(self) -> int:
        return self.coefficient.d

    def intervals(self, eps: float) -> int:
        count = self.nodes_per_period / eps
        if not 0.0 < eps <= 1.0 or abs(count - round(count)) > 1e-9:
            raise ResolutionError(f"eps={eps} does not give an integer grid with {self.nodes_per_period} nodes per period")
        return int(round(count))

    def grid(self, eps: float, refine: int = 1) -> UniformGrid:
        return UniformGrid(self.d, self.intervals(eps) * refine, 0.0, 1.0, DIRICHLET)


def solve_oscillatory(problem: MultiscaleProblem, eps: float, refine: int = 1) -> GridField:
    """u_eps with the coefficient evaluated at x / eps"""
    grid = problem.grid(eps, refine)
    if grid.n * eps < 16 - 1e-9:
        raise ResolutionError(f"grid with n={grid.n} does not resolve eps={eps}")
    system = assemble_divform(ScaledCoefficient(problem.coefficient, eps), grid)
    result = solve(system, sample_source(grid, problem.source), problem.solver)
    result.field.name = 'u_eps'
    logger.debug(f"Oscillatory solve eps={eps:g}: {result.iterations} iterations")
    return result.field


def _second_differences(values: np.ndarray, h: float) -> np.ndarray:
    d = values.ndim
    first = np.gradient(values, h, edge_order=2)
    first = [first] if d == 1 else first
    hessian = np.zeros((d, d) + values.shape)
    for j in range(d):
        second = np.gradient(first[j], h, edge_order=2)
        second = [second] if d == 1 else second
        for k in range(d):
            hessian[j, k] = second[k]
    return 0.5 * (hessian + np.swapaxes(hessian, 0, 1))


@dataclass
class HomogenizedSolution:
    field: GridField
    gradient: np.ndarray
    hessian: np.ndarray


def solve_homogenized(problem: MultiscaleProblem, a_star: np.ndarray, grid: UniformGrid) -> HomogenizedSolution:
    """Constant-coefficient solve with centred first and second differences"""
    system = assemble_divform(ConstantCoefficient(a_star), grid)
    result = solve(system, sample_source(grid, problem.source), problem.solver)
    result.field.name = 'u_star'
    values = result.field.values
    gradient = np.gradient(values, grid.h, edge_order=2)
    gradient = np.stack([gradient] if grid.d == 1 else gradient)
    return HomogenizedSolution(result.field, gradient, _second_differences(values, grid.h))


def _periodic_sampler(values: np.ndarray, shift: Sequence[float] = None) -> Callable[[np.ndarray], np.ndarray]:
    """Multilinear interpolation of a 1-periodic cell array; shift offsets the lattice in cells"""
    m = values.shape[0]
    d = values.ndim
    shift = np.zeros(d) if shift is None else np.asarray(shift, dtype=float)
    padded = np.pad(values, [(0, 1)] * d, mode='wrap')
    axis = np.arange(m + 1, dtype=float)
    interpolator = RegularGridInterpolator([axis] * d, padded)

    def sample(y):
        position = np.mod(np.asarray(y, dtype=float).reshape(-1, d) * m - shift, m)
        return interpolator(position)

    return sample


def _box_sampler(perturbed: PerturbedCorrector) -> Callable[[np.ndarray], np.ndarray]:
    """Multilinear interpolation of a truncated-box field, zero outside the box"""
    grid = perturbed.grid
    values = perturbed.field.values
    axis = grid.axis_nodes()
    if grid.periodic:
        values = np.pad(values, [(0, 1)] * grid.d, mode='wrap')
        axis = np.append(axis, grid.hi)
    interpolator = RegularGridInterpolator([axis] * grid.d, values, bounds_error=False, fill_value=0.0)
    return lambda y: interpolator(np.asarray(y, dtype=float).reshape(-1, grid.d))


def first_order_expansion(u_star: HomogenizedSolution, correctors: PeriodicCorrector,
                          perturbed: Optional[Sequence[PerturbedCorrector]], eps: float,
                          periodic_only: bool = False) -> GridField:
    """u* + eps sum_i d_i u* w_i(x/eps), with w_i = w_per_i (+ w~_i unless periodic_only)"""
    grid = u_star.field.grid
    y = grid.nodes() / eps
    total = u_star.field.values.copy()
    if perturbed and not periodic_only:
        reach = perturbed[0].half_width
        if 1.0 / eps > reach + 1e-12:
            logger.warning(f"Omega/eps extends to {1.0 / eps:g}, beyond the corrector box half-width {reach:g}")
    for i in range(grid.d):
        w = _periodic_sampler(correctors.fields[i].values)(y)
        if perturbed and not periodic_only:
            w = w + _box_sampler(perturbed[i])(y)
        total += eps * u_star.gradient[i] * w.reshape(grid.node_shape)
    return GridField(grid, total, 'u_eps_1_per' if periodic_only else 'u_eps_1')


def h_norm(problem: MultiscaleProblem, u_star: HomogenizedSolution, correctors: PeriodicCorrector,
           potential: PotentialField, perturbed: Optional[Sequence[PerturbedCorrector]], eps: float) -> float:
    """
    || H_eps ||_{L2}, H_i = eps sum_jk a_ij(x/eps) w_k(x/eps) d_j d_k u*
                          - eps sum_jk B_k^{ij}(x/eps) d_j d_k u*
    with the periodic potential
    """
    grid = u_star.field.grid
    d = grid.d
    nodes = grid.nodes()
    y = nodes / eps
    a = problem.coefficient.evaluate(y)
    hessian = u_star.hessian.reshape(d, d, -1)
    w = []
    for k in range(d):
        values = _periodic_sampler(correctors.fields[k].values)(y)
        if perturbed:
            values = values + _box_sampler(perturbed[k])(y)
        w.append(values)

    H = np.zeros((d, nodes.shape[0]))
    for i in range(d):
        for j in range(d):
            for k in range(d):
                H[i] += eps * a[:, i, j] * w[k] * hessian[j, k]
                if i != j:
                    shift = np.zeros(d)
                    shift[i] += 0.5
                    shift[j] += 0.5
                    B = _periodic_sampler(potential.get(k, i, j), shift)(y)
                    H[i] -= eps * B * hessian[j, k]
    return math.sqrt(float(np.sum(H ** 2)) * grid.h ** d)


@dataclass
class ConvergenceReport:
    rows: pd.DataFrame
    fits: Dict[str, Any]
    expected: Dict[str, float]
    a_star: np.ndarray
    metadata: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'rows': self.rows.to_dict(orient='records'),
            'fits': self.fits,
            'expected': self.expected,
            'a_star': self.a_star.tolist(),
            'metadata': self.metadata,
        }


def _remainder_norms(problem: MultiscaleProblem, eps: float, a_star: np.ndarray, correctors: PeriodicCorrector,
                     perturbed: Optional[Sequence[PerturbedCorrector]], refine: int = 1) -> Dict[str, float]:
    u_eps = solve_oscillatory(problem, eps, refine)
    grid = u_eps.grid
    u_star = solve_homogenized(problem, a_star, grid)
    interior = (problem.interior[0], problem.interior[1])

    expansion = first_order_expansion(u_star, correctors, perturbed, eps)
    remainder = GridField(grid, u_eps.values - expansion.values, 'R_eps')
    expansion_per = first_order_expansion(u_star, correctors, perturbed, eps, periodic_only=True)
    remainder_per = GridField(grid, u_eps.values - expansion_per.values, 'R_eps_per')

    whole = norms_and_gradient(remainder)
    inner = norms_and_gradient(remainder, interior)
    whole_per = norms_and_gradient(remainder_per)
    inner_per = norms_and_gradient(remainder_per, interior)
    return {
        'l2_R': whole.l2, 'h1_R_interior': inner.h1_seminorm, 'h1_R_global': whole.h1_seminorm,
        'l2_R_per': whole_per.l2, 'h1_R_per_interior': inner_per.h1_seminorm,
        'u_star': u_star,
    }


def remainder_study(problem: MultiscaleProblem) -> ConvergenceReport:
    """
    Remainder norms of the two-scale expansion per eps, log-log fits over the
    admitted rows and the expected exponents for the configured profile
    """
    coef = problem.coefficient
    d = problem.d
    cell_grid = UniformGrid(d, problem.nodes_per_period, 0.0, 1.0, PERIODIC)
    correctors = solve_periodic_correctors(coef.periodic, cell_grid, problem.solver, problem.workers)
    a_star = homogenized_tensor(correctors)
    logger.info(f"Homogenized tensor: {np.round(a_star, 8).tolist()}")

    perturbed = None
    if problem.include_perturbed and coef.has_defects:
        half_width = 1.0 / min(problem.eps_list)
        perturbed = [solve_perturbed_corrector(coef, correctors, j, half_width, problem.solver,
                                               truncation_check=False) for j in range(d)]

    potential = solve_potential(build_M(correctors, a_star)) if problem.compute_h_norm and d > 1 else None

    def job(eps):
        norms = _remainder_norms(problem, eps, a_star, correctors, perturbed)
        u_star = norms.pop('u_star')
        row = {'epsilon': float(eps), 'n': problem.intervals(eps)}
        row.update(norms)
        row['H_norm'] = h_norm(problem, u_star, correctors, potential, perturbed, eps) if potential else float('nan')
        row['admitted'] = True
        if problem.check_refinement:
            finer = _remainder_norms(problem, eps, a_star, correctors, perturbed, refine=2)
            change = max(abs(finer[key] - norms[key]) / max(abs(finer[key]), 1e-300)
                         for key in ('l2_R', 'h1_R_interior'))
            row['refinement_change'] = change
            row['admitted'] = bool(change <= problem.admission_tolerance)
        logger.info(f"eps={eps:g}: L2(R)={row['l2_R']:.3e}, interior H1(R)={row['h1_R_interior']:.3e}")
        return row

    eps_sorted = sorted((float(e) for e in problem.eps_list), reverse=True)
    with ThreadPoolExecutor(max_workers=max(1, problem.workers)) as pool:
        rows = list(pool.map(job, eps_sorted))
    table = pd.DataFrame(rows)

    fits = {}
    admitted = table[table['admitted']]
    for column in ('l2_R', 'h1_R_interior', 'h1_R_global', 'l2_R_per', 'h1_R_per_interior', 'H_norm'):
        values = admitted[column]
        if np.count_nonzero(np.isfinite(values) & (values > 0)) >= 2:
            fits[column] = fit_loglog(admitted['epsilon'], values.fillna(0.0))
    expected = expected_exponents(d, 2.0)
    metadata = {'coefficient_hash': coef.coefficient_hash(), 'nodes_per_period': problem.nodes_per_period,
                'interior': list(problem.interior), 'with_defects': bool(coef.has_defects),
                'potential_residual': potential.divergence_residual if potential else None}
    return ConvergenceReport(table, fits, expected, a_star, metadata)


def flux_average_tensor(coef: PerturbedCoefficient, correctors: PeriodicCorrector, R_list: Sequence[float],
                        config: Optional[SolverConfig] = None) -> pd.DataFrame:
    """
    Average of a (e_j + grad w_j) over the boxes [-R, R)^d from one
    perturbed corrector solve per direction on the box of half-width 2 max R
    """
    R_list = sorted(float(R) for R in R_list)
    d = coef.d
    a_star = homogenized_tensor(correctors)
    half_width = 2.0 * R_list[-1]
    perturbed = [solve_perturbed_corrector(coef, correctors, j, half_width, config, truncation_check=False)
                 for j in range(d)]

    grid = perturbed[0].grid
    fluxes = [box_flux(correctors, perturbed[j]) for j in range(d)]
    cell_points = grid.cell_points()

    rows = []
    for R in R_list:
        tensor = np.zeros((d, d))
        in_cells = np.all((cell_points >= -R) & (cell_points < R), axis=1)
        for k in range(d):
            points = grid.face_points(k)
            inside = np.all((points >= -R) & (points < R), axis=1)
            for j in range(d):
                faces, cells = fluxes[j]
                tensor[k, j] = faces[k][inside].mean()
                if cells is not None:
                    tensor[k, j] += cells[k][in_cells].mean()
        gap = float(np.linalg.norm(tensor - a_star) / np.linalg.norm(a_star))
        row = {'R': R, 'gap': gap}
        row.update({f"a_{k + 1}{j + 1}": tensor[k, j] for k in range(d) for j in range(d)})
        rows.append(row)
    table = pd.DataFrame(rows)
    logger.info(f"Flux-average tensor gaps: {np.round(table['gap'].to_numpy(), 6).tolist()}")
    return table
