"""
Corrector Solver
Periodic cell problems and the homogenized tensor, perturbed correctors on
truncated boxes, the divergence-free matrix M with its antisymmetric
potential B, and growth / sublinearity diagnostics
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Tuple, Any, Optional, Sequence

import numpy as np
import pandas as pd

from coefficient_builder import PerturbedCoefficient
from divform_solver import (
    DIRICHLET, PERIODIC, GridField, SolveResult, SolverConfig, SparseSystem, UniformGrid,
    assemble_divform, assemble_rhs_div, norms_and_gradient, poisson_dirichlet_spectral,
    poisson_periodic_spectral, prepare_preconditioner, solve,
)
from lab_errors import ConfigError, GridAlignmentError
from rate_fitting import fit_line
import logging

logger = logging.getLogger(__name__)


@dataclass
class PeriodicCorrector:
    """Mean-zero periodic correctors w_{e_j}, one per direction, on the unit cell grid"""
    grid: UniformGrid
    system: SparseSystem
    fields: List[GridField]
    results: List[SolveResult]

    @property
    def d(self) -> int:
        return self.grid.d

    @property
    def cells_per_unit(self) -> int:
        return self.grid.n

    def flux(self, j: int) -> Tuple[List[np.ndarray], Optional[List[np.ndarray]]]:
        """a_per (e_j + grad w_j)"""
        return self.system.flux(self.fields[j].unknowns(), shift=np.eye(self.d)[j])

    def face_gradient(self, j: int, k: int) -> np.ndarray:
        """d w_j / d x_k on the k-faces, shaped like the cell grid"""
        values = self.grid.face_difference(k) @ self.fields[j].unknowns() / self.grid.h
        return values.reshape(self.grid.face_shape(k))

    def cell_gradient(self, j: int, k: int) -> np.ndarray:
        values = self.grid.cell_difference(k) @ self.fields[j].unknowns() / self.grid.h
        return values.reshape(self.grid.cell_shape)


def _cell_grid_check(grid: UniformGrid):
    if not grid.periodic or grid.lo != 0.0 or grid.hi != 1.0:
        raise ConfigError("periodic correctors live on the periodic unit cell grid [0, 1]^d")


def solve_periodic_corrector(a_per: Any, grid: UniformGrid, j: int,
                             config: Optional[SolverConfig] = None,
                             system: Optional[SparseSystem] = None) -> Tuple[GridField, SolveResult]:
    """Mean-zero w with -div(a_per (grad w + e_j)) = 0 on the discrete torus"""
    _cell_grid_check(grid)
    if not 0 <= j < grid.d:
        raise ConfigError(f"direction {j} out of range for d={grid.d}")
    system = system or assemble_divform(a_per, grid)
    faces, cells = system.flux(np.zeros(grid.num_unknowns), shift=np.eye(grid.d)[j])
    result = solve(system, assemble_rhs_div(faces, grid, cells), config)
    result.field.name = f"w_per_{j}"
    return result.field, result


def solve_periodic_correctors(a_per: Any, grid: UniformGrid, config: Optional[SolverConfig] = None,
                              workers: int = 1) -> PeriodicCorrector:
    """All d periodic correctors; directions run as independent jobs"""
    _cell_grid_check(grid)
    config = config or SolverConfig()
    system = assemble_divform(a_per, grid)
    # the jobs share one preconditioner
    prepare_preconditioner(system, config)

    def job(j):
        return solve_periodic_corrector(a_per, grid, j, config, system)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        outcomes = list(pool.map(job, range(grid.d)))
    for j, (_, result) in enumerate(outcomes):
        logger.info(f"Periodic corrector e_{j}: {result.iterations} iterations, residual {result.residual:.2e}")
    return PeriodicCorrector(grid, system, [o[0] for o in outcomes], [o[1] for o in outcomes])


def homogenized_tensor(corrector: PeriodicCorrector) -> np.ndarray:
    """(a*)_ij = cell average of e_i . a_per (e_j + grad w_j)"""
    d = corrector.d
    a_star = np.zeros((d, d))
    for j in range(d):
        faces, cells = corrector.flux(j)
        for i in range(d):
            a_star[i, j] = faces[i].mean() + (cells[i].mean() if cells is not None else 0.0)
    return a_star


def energy_tensor(corrector: PeriodicCorrector) -> np.ndarray:
    """Symmetric form: cell average of (e_i + grad w_i) . a_per (e_j + grad w_j)"""
    d = corrector.d
    grid = corrector.grid
    system = corrector.system
    face_gradients = [[(1.0 if k == i else 0.0) + corrector.face_gradient(i, k).ravel()
                       for k in range(d)] for i in range(d)]
    tensor = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            total = sum(np.mean(system.face_coefficients[k] * face_gradients[i][k] * face_gradients[j][k])
                        for k in range(d))
            if system.cell_coefficients is not None:
                cell_i = [(1.0 if k == i else 0.0) + corrector.cell_gradient(i, k).ravel() for k in range(d)]
                cell_j = [(1.0 if k == j else 0.0) + corrector.cell_gradient(j, k).ravel() for k in range(d)]
                for k in range(d):
                    for l in range(d):
                        if k != l:
                            total += np.mean(system.cell_coefficients[:, k, l] * cell_i[k] * cell_j[l])
            tensor[i, j] = total
    return tensor


def _tile_periodic(values: np.ndarray, shape: Sequence[int], offset: int) -> np.ndarray:
    """Periodic cell array sampled on a box array whose index 0 sits at cell index offset"""
    m = values.shape[0]
    index = [(np.arange(count) + offset) % m for count in shape]
    return values[np.ix_(*index)]


def _box_offset(corrector: PeriodicCorrector, L: float) -> Tuple[int, int]:
    """Box grid intervals and the cell-grid index of the box corner"""
    m = corrector.cells_per_unit
    scaled = L * m
    if abs(scaled - round(scaled)) > 1e-9 or round(scaled) < 2:
        raise GridAlignmentError(f"box half-width {L} is not a multiple of the cell spacing 1/{m}")
    half = int(round(scaled))
    return 2 * half, (-half) % m


@dataclass
class PerturbedCorrector:
    """w~_j on [-L, L]^d, zero on the boundary (or periodic on the box)"""
    grid: UniformGrid
    direction: int
    half_width: float
    field: GridField
    result: SolveResult
    system: SparseSystem
    truncation_error: Optional[float] = None
    uncovered: List[Tuple[int, ...]] = field(default_factory=list)

    def cell_gradients(self) -> np.ndarray:
        """grad w~ at the box cell centres, shape (d, n^d)"""
        u = self.field.unknowns()
        return np.stack([self.grid.cell_difference(k) @ u / self.grid.h for k in range(self.grid.d)])


def _defect_coefficients(coef: PerturbedCoefficient, points: np.ndarray) -> np.ndarray:
    if coef.is_diagonal:
        d = coef.d
        values = np.zeros((points.shape[0], d, d))
        values[:, np.arange(d), np.arange(d)] = coef.defect_diagonal(points)
        return values
    return coef.defect_part(points)


def perturbed_rhs(coef: PerturbedCoefficient, corrector: PeriodicCorrector, j: int,
                  grid: UniformGrid, offset: int) -> np.ndarray:
    """div(a~ (e_j + grad w_per_j)) on the box unknowns, staggered like the operator"""
    d = grid.d
    faces = []
    for k in range(d):
        a_tilde = _defect_coefficients(coef, grid.face_points(k))[:, k, k]
        gradient = _tile_periodic(corrector.face_gradient(j, k), grid.face_shape(k), offset).ravel()
        faces.append(a_tilde * ((1.0 if k == j else 0.0) + gradient))
    cells = None
    if not coef.is_diagonal:
        a_tilde = _defect_coefficients(coef, grid.cell_points())
        gradients = [(1.0 if l == j else 0.0)
                     + _tile_periodic(corrector.cell_gradient(j, l), grid.cell_shape, offset).ravel()
                     for l in range(d)]
        cells = [sum(a_tilde[:, k, l] * gradients[l] for l in range(d) if l != k) for k in range(d)]
    return assemble_rhs_div(faces, grid, cells)


def _uncovered_defects(coef: PerturbedCoefficient, L: float) -> List[Tuple[int, ...]]:
    """Defects whose support crosses the boundary of [-L, L]^d"""
    if not coef.has_defects:
        return []
    reach = coef.profile.reach
    ranks = coef.point_set.points_within(-np.full(coef.d, L), np.full(coef.d, L), reach)
    crossing = []
    for rank in ranks:
        point = coef.point_set.points[rank]
        if np.any(np.abs(point) + reach > L):
            crossing.append(tuple(int(c) for c in coef.point_set.indices[rank]))
    return crossing


def _solve_on_box(coef: PerturbedCoefficient, corrector: PeriodicCorrector, j: int, L: float,
                  bc: str, config: Optional[SolverConfig]) -> PerturbedCorrector:
    n, offset = _box_offset(corrector, L)
    grid = UniformGrid(coef.d, n, -L, L, bc)
    uncovered = _uncovered_defects(coef, L) if bc == DIRICHLET else []
    if uncovered:
        logger.warning(f"{len(uncovered)} defect supports cross the boundary of the box of half-width {L}")

    system = assemble_divform(coef, grid)
    result = solve(system, perturbed_rhs(coef, corrector, j, grid, offset), config)
    result.field.name = f"w_tilde_{j}"
    logger.info(f"Perturbed corrector e_{j} on half-width {L} ({bc}): {result.iterations} iterations")
    return PerturbedCorrector(grid, j, float(L), result.field, result, system, uncovered=uncovered)


def _restrict_to_box(larger: PerturbedCorrector, grid: UniformGrid) -> np.ndarray:
    """Node values of a solve on a larger aligned box, restricted to grid"""
    start = larger.grid.index_of(grid.lo)
    count = grid.node_shape[0]
    if larger.grid.periodic:
        index = [(np.arange(count) + start) % larger.grid.n] * grid.d
        return larger.field.values[np.ix_(*index)]
    return larger.field.values[(slice(start, start + count),) * grid.d]


def gradient_difference(first: PerturbedCorrector, second_values: np.ndarray, inner: float) -> float:
    """|| grad(first - second) ||_{L2([-inner, inner]^d)}"""
    values = first.field.values - second_values
    if first.grid.periodic:
        values = values - values.mean()
    grid = UniformGrid(first.grid.d, first.grid.n, first.grid.lo, first.grid.hi, DIRICHLET)
    if first.grid.periodic:
        values = np.pad(values, [(0, 1)] * grid.d, mode='wrap')
    difference = GridField(grid, values)
    return norms_and_gradient(difference, (-inner, inner)).h1_seminorm


def solve_perturbed_corrector(coef: PerturbedCoefficient, corrector: PeriodicCorrector, j: int, L: float,
                              config: Optional[SolverConfig] = None, truncation_check: bool = True,
                              bc: str = DIRICHLET) -> PerturbedCorrector:
    """
    -div((a_per + a~) grad w~) = div(a~ (e_j + grad w_per)) on [-L, L]^d with the
    box spacing equal to the cell-grid spacing. With truncation_check the
    2L solve gives || grad w~_L - grad w~_2L ||_{L2(B_{L/2})}.
    """
    if not 0 <= j < coef.d:
        raise ConfigError(f"direction {j} out of range for d={coef.d}")
    if bc not in (DIRICHLET, PERIODIC):
        raise ConfigError(f"unknown boundary condition '{bc}'")
    perturbed = _solve_on_box(coef, corrector, j, L, bc, config)
    if truncation_check:
        _box_offset(corrector, L / 2)
        doubled = _solve_on_box(coef, corrector, j, 2 * L, bc, config)
        perturbed.truncation_error = gradient_difference(perturbed, _restrict_to_box(doubled, perturbed.grid), L / 2)
        logger.info(f"Truncation error on half-width {L / 2}: {perturbed.truncation_error:.3e}")
    return perturbed


def truncation_agreement(coef: PerturbedCoefficient, corrector: PeriodicCorrector, j: int, L: float,
                         config: Optional[SolverConfig] = None,
                         dirichlet: Optional[PerturbedCorrector] = None) -> Dict[str, float]:
    """Dirichlet and periodic-extension truncations compared on B_{L/2}"""
    if dirichlet is None or dirichlet.truncation_error is None:
        dirichlet = solve_perturbed_corrector(coef, corrector, j, L, config, truncation_check=True)
    periodic = solve_perturbed_corrector(coef, corrector, j, L, config, truncation_check=False, bc=PERIODIC)
    difference = gradient_difference(dirichlet, np.pad(periodic.field.values, [(0, 1)] * coef.d, mode='wrap'), L / 2)
    logger.info(f"Dirichlet vs periodic truncation on half-width {L / 2}: {difference:.3e}")
    return {
        'difference': difference,
        'truncation_error': dirichlet.truncation_error,
        'agree': bool(difference <= max(dirichlet.truncation_error, 1e-12) * 4.0),
    }


def gradient_cell_table(perturbed: PerturbedCorrector, point_set: Any,
                        reference: Optional[PerturbedCorrector] = None,
                        indices: Optional[Sequence[Sequence[int]]] = None) -> pd.DataFrame:
    """
    || grad w~ ||_{L2(V_p cap box)} per enumerated cell and, with a single-defect
    reference solve, || grad w~ - grad w~_ref(. - x_p) ||_{L2(V_p cap box)}
    """
    grid = perturbed.grid
    d = grid.d
    centres = grid.cell_points()
    gradients = perturbed.cell_gradients()
    ranks, _ = point_set.nearest_batch(centres)
    volume = grid.h ** d

    if reference is not None:
        if abs(reference.grid.h - grid.h) > 1e-12 * grid.h:
            raise GridAlignmentError("reference solve must share the box spacing")
        reference_gradients = reference.cell_gradients().reshape((d,) + reference.grid.cell_shape)

    if indices is None:
        wanted = np.unique(ranks)
    else:
        wanted = [point_set.rank_of(p) for p in indices]

    rows = []
    for rank in wanted:
        mask = ranks == rank
        if not np.any(mask):
            continue
        index = tuple(int(c) for c in point_set.indices[rank])
        local = gradients[:, mask]
        row = {'index': ' '.join(str(c) for c in index), 'generation': int(max(abs(c) for c in index)),
               'cells': int(mask.sum()), 'gradient_norm': math.sqrt(float(np.sum(local ** 2)) * volume)}
        if reference is not None:
            shifted = centres[mask] - point_set.points[rank]
            position = np.rint((shifted - reference.grid.lo) / grid.h - 0.5).astype(np.int64)
            inside = np.all((position >= 0) & (position < reference.grid.n), axis=1)
            translated = np.zeros_like(local)
            flat = np.ravel_multi_index(tuple(position[inside].T), reference.grid.cell_shape)
            translated[:, inside] = reference_gradients.reshape(d, -1)[:, flat]
            row['residual_norm'] = math.sqrt(float(np.sum((local - translated) ** 2)) * volume)
        rows.append(row)
    return pd.DataFrame(rows)


def corrector_diagnostics(corrector: PeriodicCorrector, perturbed: PerturbedCorrector,
                          point_set: Optional[Any] = None) -> Dict[str, Any]:
    """
    Sublinearity ratios of w = w_per + w~ for s in {d+1, 2d}, sup |w~| over
    nested boxes with a log-growth fit, and the cell-wise grad w~ table
    """
    grid = perturbed.grid
    d = grid.d
    j = perturbed.direction
    _, offset = _box_offset(corrector, perturbed.half_width)
    periodic_values = _tile_periodic(corrector.fields[j].values, grid.node_shape, offset)
    total = periodic_values + perturbed.field.values
    centre = grid.n // 2

    rows = []
    step = 2
    while step <= grid.n // 4:
        distance = step * grid.h
        if distance > 1.0:
            for anchor in (centre, centre - grid.n // 4):
                origin = (anchor,) * d
                target = (anchor + step,) + (anchor,) * (d - 1)
                jump = abs(total[origin] - total[target])
                for s in (d + 1, 2 * d):
                    scale = abs(math.log(distance)) ** (1.0 / s) * distance ** (1.0 - d / s)
                    rows.append({'s': s, 'distance': distance, 'anchor': anchor * grid.h + grid.lo,
                                 'ratio': jump / scale})
        step *= 2
    sublinearity = pd.DataFrame(rows, columns=['s', 'distance', 'anchor', 'ratio'])

    growth_rows = []
    radius = 1.0
    while radius <= perturbed.half_width / 2 + 1e-12:
        half = int(round(radius / grid.h))
        window = (slice(centre - half, centre + half + 1),) * d
        growth_rows.append({'R': radius, 'sup_abs': float(np.abs(perturbed.field.values[window]).max())})
        radius *= 2
    growth = pd.DataFrame(growth_rows, columns=['R', 'sup_abs'])
    growth_fit = None
    if len(growth) >= 2:
        growth_fit = fit_line(np.log2(growth['R']), growth['sup_abs'])

    report = {'sublinearity': sublinearity, 'sup_growth': growth, 'growth_fit': growth_fit,
              'max_ratio': {int(s): float(group['ratio'].max()) for s, group in sublinearity.groupby('s')}}
    if point_set is not None:
        try:
            report['cell_gradients'] = gradient_cell_table(perturbed, point_set)
        except Exception as e:
            logger.warning(f"Cell gradient table skipped: {e}")
            report['cell_gradients'] = None
    return report


@dataclass
class MatrixField:
    """
    M_k^i = a*_ik - [a (e_k + grad w_k)]_i, row k stored per component i on the
    i-faces (plus cell parts for full tensors)
    """
    grid: UniformGrid
    faces: np.ndarray
    cells: Optional[np.ndarray]
    divergence_residual: float
    cell_average: np.ndarray

    def component(self, k: int, i: int) -> np.ndarray:
        """M_k^i on the i-faces with cell parts averaged onto them"""
        values = self.faces[k, i].reshape(self.grid.face_shape(i))
        if self.cells is None:
            return values
        cell = self.cells[k, i].reshape(self.grid.cell_shape)
        for axis in range(self.grid.d):
            if axis != i:
                cell = 0.5 * (cell + np.roll(cell, 1, axis=axis))
        return values + cell


def build_M(corrector: PeriodicCorrector, a_star: np.ndarray) -> MatrixField:
    """Divergence-free matrix of the periodic problem and its discrete divergence residual"""
    grid = corrector.grid
    d = grid.d
    faces = np.zeros((d, d, grid.n ** d))
    cells = None if corrector.system.is_diagonal else np.zeros((d, d, grid.n ** d))
    residual = 0.0
    scale = max(float(np.abs(a_star).max()), 1e-300)
    for k in range(d):
        flux_faces, flux_cells = corrector.flux(k)
        for i in range(d):
            faces[k, i] = a_star[i, k] - flux_faces[i]
            if cells is not None:
                cells[k, i] = -flux_cells[i]
        divergence = assemble_rhs_div(list(faces[k]), grid, list(cells[k]) if cells is not None else None)
        residual = max(residual, math.sqrt(float(np.sum(divergence ** 2)) * grid.h ** d) / scale)
    average = faces.mean(axis=2) + (cells.mean(axis=2) if cells is not None else 0.0)
    return MatrixField(grid, faces, cells, residual, average)


def _forward(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (np.roll(values, -1, axis=axis) - values) / h


def _backward(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (values - np.roll(values, 1, axis=axis)) / h


@dataclass
class PotentialField:
    """B_k^{ij} stored once for i < j; B_k^{ji} = -B_k^{ij}"""
    grid: UniformGrid
    pairs: Dict[Tuple[int, int, int], np.ndarray]
    divergence_residual: float
    curl_residual: float = 0.0
    perturbed: Optional[Dict[Tuple[int, int, int], GridField]] = None
    perturbed_residual: Optional[float] = None

    def get(self, k: int, i: int, j: int) -> np.ndarray:
        if i == j:
            return np.zeros(self.grid.node_shape)
        if i < j:
            return self.pairs[(k, i, j)]
        return -self.pairs[(k, j, i)]


def solve_potential(M: MatrixField) -> PotentialField:
    """
    -Lap B_k^{ij} = D+_j M_k^i - D+_i M_k^j on the (i, j) edge lattice, by FFT.
    Reports max_{k,j} || sum_i D-_i B_k^{ij} - M_k^j ||_{L2} relative to |M|,
    and the curl residual: the curl of the field rebuilt from B against the
    curl of M, relative to the larger of |curl M| and |M|.
    """
    grid = M.grid
    d = grid.d
    h = grid.h
    components = {(k, i): M.component(k, i) for k in range(d) for i in range(d)}
    pairs = {}
    for k in range(d):
        for i in range(d):
            for j in range(i + 1, d):
                source = _forward(components[(k, i)], j, h) - _forward(components[(k, j)], i, h)
                pairs[(k, i, j)] = poisson_periodic_spectral(GridField(grid, source)).values

    potential = PotentialField(grid, pairs, 0.0)
    scale = max(max(float(np.sqrt(np.mean(c ** 2))) for c in components.values()), 1e-300)
    residual = 0.0
    rebuilt = {}
    for k in range(d):
        for j in range(d):
            rebuilt[(k, j)] = sum((_backward(potential.get(k, i, j), i, h) for i in range(d) if i != j),
                                  np.zeros(grid.node_shape))
            mismatch = rebuilt[(k, j)] - (components[(k, j)] - components[(k, j)].mean())
            residual = max(residual, float(np.sqrt(np.mean(mismatch ** 2))) / scale)

    curl = 0.0
    for k in range(d):
        for i in range(d):
            for j in range(i + 1, d):
                target = _forward(components[(k, i)], j, h) - _forward(components[(k, j)], i, h)
                found = _forward(rebuilt[(k, i)], j, h) - _forward(rebuilt[(k, j)], i, h)
                size = max(float(np.sqrt(np.mean(target ** 2))), scale)
                curl = max(curl, float(np.sqrt(np.mean((found - target) ** 2))) / size)
    potential.divergence_residual = residual
    potential.curl_residual = curl
    logger.info(f"Periodic potential: divergence residual {residual:.3e}, curl residual {curl:.3e}")
    return potential


def box_flux(corrector: PeriodicCorrector, perturbed: PerturbedCorrector
             ) -> Tuple[List[np.ndarray], Optional[List[np.ndarray]]]:
    """
    a (e_j + grad w_per_j + grad w~_j) on the box faces per axis k and, for
    full tensors, its off-diagonal parts at the box cell centres
    """
    grid = perturbed.grid
    d = grid.d
    j = perturbed.direction
    system = perturbed.system
    _, offset = _box_offset(corrector, perturbed.half_width)
    faces, cells = system.flux(perturbed.field.unknowns(), shift=np.eye(d)[j])
    faces = [faces[k] + system.face_coefficients[k]
             * _tile_periodic(corrector.face_gradient(j, k), grid.face_shape(k), offset).ravel()
             for k in range(d)]
    if cells is not None:
        gradients = [_tile_periodic(corrector.cell_gradient(j, l), grid.cell_shape, offset).ravel()
                     for l in range(d)]
        cells = [cells[k] + sum(system.cell_coefficients[:, k, l] * gradients[l] for l in range(d) if l != k)
                 for k in range(d)]
    return faces, cells


def _cells_to_inner_nodes(values: np.ndarray, grid: UniformGrid) -> np.ndarray:
    """Cell-centre values averaged onto the box nodes, zero on the boundary"""
    d = grid.d
    averaged = values.reshape(grid.cell_shape)
    for axis in range(d):
        ahead = tuple(slice(1, None) if a == axis else slice(None) for a in range(d))
        behind = tuple(slice(None, -1) if a == axis else slice(None) for a in range(d))
        averaged = 0.5 * (averaged[ahead] + averaged[behind])
    nodes = np.zeros(grid.node_shape)
    nodes[(slice(1, -1),) * d] = averaged
    return nodes


def perturbed_matrix(corrector: PeriodicCorrector, perturbed: Sequence[PerturbedCorrector]) -> List[List[np.ndarray]]:
    """
    M~_k^i = M_k^i - M_per,k^i on the box, collocated at the box nodes by
    averaging the face values (and the cell parts of full tensors)
    """
    grid = perturbed[0].grid
    d = grid.d
    _, offset = _box_offset(corrector, perturbed[0].half_width)
    rows = []
    for k in range(d):
        total_faces, total_cells = box_flux(corrector, perturbed[k])
        periodic_faces, periodic_cells = corrector.flux(k)
        row = []
        for i in range(d):
            total = total_faces[i]
            periodic = _tile_periodic(periodic_faces[i].reshape(corrector.grid.face_shape(i)),
                                      grid.face_shape(i), offset).ravel()
            faces = -(total - periodic).reshape(grid.face_shape(i))
            nodes = np.zeros(grid.node_shape)
            inner = 0.5 * (faces[tuple(slice(1, None) if a == i else slice(None) for a in range(d))]
                           + faces[tuple(slice(None, -1) if a == i else slice(None) for a in range(d))])
            nodes[tuple(slice(1, -1) if a == i else slice(None) for a in range(d))] = inner
            if total_cells is not None:
                cells = total_cells[i]
                if periodic_cells is not None:
                    cells = cells - _tile_periodic(periodic_cells[i].reshape(corrector.grid.cell_shape),
                                                   grid.cell_shape, offset).ravel()
                nodes -= _cells_to_inner_nodes(cells, grid)
            row.append(nodes)
        rows.append(row)
    return rows


def solve_perturbed_potential(rows: List[List[np.ndarray]], grid: UniformGrid
                              ) -> Tuple[Dict[Tuple[int, int, int], GridField], float]:
    """
    Dirichlet Poisson solves for B~_k^{ij} on the box by the sine transform,
    collocated with centred differences; returns the fields and the relative
    divergence residual on the inner half box
    """
    d = grid.d
    h = grid.h

    def centred(values, axis):
        out = np.zeros_like(values)
        inner = tuple(slice(1, -1) if a == axis else slice(None) for a in range(d))
        ahead = tuple(slice(2, None) if a == axis else slice(None) for a in range(d))
        behind = tuple(slice(None, -2) if a == axis else slice(None) for a in range(d))
        out[inner] = (values[ahead] - values[behind]) / (2 * h)
        return out

    fields = {}
    for k in range(d):
        for i in range(d):
            for j in range(i + 1, d):
                source = centred(rows[k][i], j) - centred(rows[k][j], i)
                fields[(k, i, j)] = poisson_dirichlet_spectral(GridField.from_unknowns(
                    grid, source[(slice(1, -1),) * d].ravel()))

    quarter = grid.n // 4
    window = (slice(quarter, grid.n - quarter + 1),) * d
    scale = max(max(float(np.sqrt(np.mean(r[window] ** 2))) for row in rows for r in row), 1e-300)
    residual = 0.0
    for k in range(d):
        for j in range(d):
            divergence = np.zeros(grid.node_shape)
            for i in range(d):
                if i < j:
                    divergence += centred(fields[(k, i, j)].values, i)
                elif i > j:
                    divergence -= centred(fields[(k, j, i)].values, i)
            mismatch = (divergence - rows[k][j])[window]
            residual = max(residual, float(np.sqrt(np.mean(mismatch ** 2))) / scale)
    return fields, residual
