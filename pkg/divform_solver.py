"""
Divergence-Form Solver
Finite-difference discretization of -div(a grad u) on uniform grids with
Dirichlet-zero or periodic boundary conditions, preconditioned conjugate
gradients, spectral Poisson solves, norms and raw field dumps
"""

import math
from dataclasses import dataclass, field
from functools import reduce
from pathlib import Path
from typing import Dict, List, Tuple, Any, Optional, Callable, NamedTuple, Sequence, Union

import numpy as np
import scipy.sparse as sp
from scipy import fft
from scipy.sparse.linalg import LinearOperator, cg

from lab_errors import ConfigError, ConvergenceError, EllipticityError, GridAlignmentError
import logging

logger = logging.getLogger(__name__)

DIRICHLET = 'dirichlet'
PERIODIC = 'periodic'
BC_CODES = {DIRICHLET: 0, PERIODIC: 1}

FIELD_MAGIC = b'HMLF'
FIELD_HEADER = np.dtype([
    ('magic', 'S4'), ('d', '<u1'), ('bc', '<u1'), ('n', '<u2', (3,)), ('reserved', '<u4'),
    ('lo', '<f8'), ('hi', '<f8'),
])


def _kron_all(factors: Sequence[sp.spmatrix]) -> sp.csr_matrix:
    return reduce(lambda left, right: sp.kron(left, right, format='csr'), factors).tocsr()


class UniformGrid:
    """
    Uniform grid on [lo, hi]^d with n intervals per axis.
    Dirichlet grids carry (n+1)^d nodes and (n-1)^d unknowns; periodic grids
    carry n^d nodes, all unknowns, with node n identified with node 0.
    """

    def __init__(self, d: int, n: int, lo: float = 0.0, hi: float = 1.0, bc: str = DIRICHLET):
        if int(d) != d or d < 1:
            raise ConfigError(f"dimension must be a positive integer, got {d}")
        if int(n) != n or n < 4:
            raise ConfigError(f"grid needs n >= 4 intervals per axis, got {n}")
        if not hi > lo:
            raise ConfigError(f"grid box must have hi > lo, got [{lo}, {hi}]")
        if bc not in BC_CODES:
            raise ConfigError(f"boundary condition must be one of {sorted(BC_CODES)}, got '{bc}'")
        self.d = int(d)
        self.n = int(n)
        self.lo = float(lo)
        self.hi = float(hi)
        self.bc = bc
        self.h = (self.hi - self.lo) / self.n
        self._operators: Dict[Tuple[str, int], sp.csr_matrix] = {}

    @property
    def periodic(self) -> bool:
        return self.bc == PERIODIC

    @property
    def node_shape(self) -> Tuple[int, ...]:
        return (self.n if self.periodic else self.n + 1,) * self.d

    @property
    def unknown_shape(self) -> Tuple[int, ...]:
        return (self.n if self.periodic else self.n - 1,) * self.d

    @property
    def num_unknowns(self) -> int:
        return int(np.prod(self.unknown_shape))

    def axis_nodes(self) -> np.ndarray:
        count = self.n if self.periodic else self.n + 1
        return self.lo + np.arange(count) * self.h

    def axis_midpoints(self) -> np.ndarray:
        return self.lo + (np.arange(self.n) + 0.5) * self.h

    def _mesh(self, axes: List[np.ndarray]) -> np.ndarray:
        return np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1).reshape(-1, self.d)

    def nodes(self) -> np.ndarray:
        """Coordinates of every stored node, C-ordered"""
        return self._mesh([self.axis_nodes()] * self.d)

    def unknown_points(self) -> np.ndarray:
        axis = self.axis_nodes() if self.periodic else self.axis_nodes()[1:-1]
        return self._mesh([axis] * self.d)

    def face_points(self, k: int) -> np.ndarray:
        """Midpoints of the grid edges parallel to axis k"""
        axes = [self.axis_midpoints() if axis == k else self.axis_nodes() for axis in range(self.d)]
        return self._mesh(axes)

    def cell_points(self) -> np.ndarray:
        return self._mesh([self.axis_midpoints()] * self.d)

    def face_shape(self, k: int) -> Tuple[int, ...]:
        node_count = self.node_shape[0]
        return tuple(self.n if axis == k else node_count for axis in range(self.d))

    @property
    def cell_shape(self) -> Tuple[int, ...]:
        return (self.n,) * self.d

    def _embedding(self) -> sp.csr_matrix:
        """Unknowns to stored nodes"""
        if self.periodic:
            return sp.identity(self.num_unknowns, format='csr')
        if ('embed', 0) not in self._operators:
            one = sp.eye(self.n + 1, self.n - 1, k=-1, format='csr')
            self._operators[('embed', 0)] = _kron_all([one] * self.d)
        return self._operators[('embed', 0)]

    def _difference_1d(self) -> sp.csr_matrix:
        if self.periodic:
            return (sp.eye(self.n, k=1) - sp.eye(self.n) + sp.eye(self.n, k=1 - self.n)).tocsr()
        return (sp.eye(self.n, self.n + 1, k=1) - sp.eye(self.n, self.n + 1)).tocsr()

    def _average_1d(self) -> sp.csr_matrix:
        if self.periodic:
            return (0.5 * (sp.eye(self.n, k=1) + sp.eye(self.n) + sp.eye(self.n, k=1 - self.n))).tocsr()
        return (0.5 * (sp.eye(self.n, self.n + 1, k=1) + sp.eye(self.n, self.n + 1))).tocsr()

    def face_difference(self, k: int) -> sp.csr_matrix:
        """D_k: unknowns to edge differences along axis k (no 1/h)"""
        key = ('face', k)
        if key not in self._operators:
            identity = sp.identity(self.node_shape[0], format='csr')
            factors = [self._difference_1d() if axis == k else identity for axis in range(self.d)]
            self._operators[key] = (_kron_all(factors) @ self._embedding()).tocsr()
        return self._operators[key]

    def cell_difference(self, k: int) -> sp.csr_matrix:
        """C_k: unknowns to the cell-averaged difference along axis k (no 1/h)"""
        key = ('cell', k)
        if key not in self._operators:
            factors = [self._difference_1d() if axis == k else self._average_1d() for axis in range(self.d)]
            self._operators[key] = (_kron_all(factors) @ self._embedding()).tocsr()
        return self._operators[key]

    def prolongation(self) -> sp.csr_matrix:
        """Multilinear interpolation from the grid with n/2 intervals"""
        if self.n % 2:
            raise ConfigError(f"cannot coarsen a grid with odd n={self.n}")
        coarse = self.n // 2
        if self.periodic:
            rows, cols, vals = [], [], []
            for c in range(coarse):
                for fine, weight in ((2 * c, 1.0), (2 * c + 1, 0.5), ((2 * c - 1) % self.n, 0.5)):
                    rows.append(fine)
                    cols.append(c)
                    vals.append(weight)
            one = sp.csr_matrix((vals, (rows, cols)), shape=(self.n, coarse))
        else:
            rows, cols, vals = [], [], []
            for c in range(1, coarse):
                for fine, weight in ((2 * c, 1.0), (2 * c - 1, 0.5), (2 * c + 1, 0.5)):
                    rows.append(fine - 1)
                    cols.append(c - 1)
                    vals.append(weight)
            one = sp.csr_matrix((vals, (rows, cols)), shape=(self.n - 1, coarse - 1))
        return _kron_all([one] * self.d)

    def coarsen(self) -> 'UniformGrid':
        return UniformGrid(self.d, self.n // 2, self.lo, self.hi, self.bc)

    def index_of(self, coordinate: float) -> int:
        """Node index of a coordinate that must fall on the grid"""
        position = (coordinate - self.lo) / self.h
        index = int(round(position))
        if abs(position - index) > 1e-8 * max(1.0, abs(position)):
            raise GridAlignmentError(f"coordinate {coordinate} is not a grid node (h={self.h})")
        return index

    def describe(self) -> Dict[str, Any]:
        return {'d': self.d, 'n': self.n, 'lo': self.lo, 'hi': self.hi, 'bc': self.bc}


@dataclass
class GridField:
    """Scalar field on the stored nodes of a grid"""
    grid: UniformGrid
    values: np.ndarray
    name: str = ''

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.node_shape:
            raise ConfigError(f"field shape {self.values.shape} does not match grid nodes {self.grid.node_shape}")

    @classmethod
    def zeros(cls, grid: UniformGrid, name: str = '') -> 'GridField':
        return cls(grid, np.zeros(grid.node_shape), name)

    @classmethod
    def from_unknowns(cls, grid: UniformGrid, vector: np.ndarray, name: str = '') -> 'GridField':
        vector = np.asarray(vector, dtype=float)
        if vector.size != grid.num_unknowns:
            raise ConfigError(f"expected {grid.num_unknowns} unknowns, got {vector.size}")
        if grid.periodic:
            return cls(grid, vector.reshape(grid.node_shape), name)
        values = np.zeros(grid.node_shape)
        values[(slice(1, -1),) * grid.d] = vector.reshape(grid.unknown_shape)
        return cls(grid, values, name)

    @classmethod
    def from_function(cls, grid: UniformGrid, f: Callable[[np.ndarray], np.ndarray],
                      name: str = '') -> 'GridField':
        """Sample f at the nodes; Dirichlet boundary nodes are set to zero"""
        values = np.asarray(f(grid.nodes()), dtype=float).reshape(grid.node_shape)
        if not grid.periodic:
            values = values.copy()
            for axis in range(grid.d):
                index = [slice(None)] * grid.d
                index[axis] = [0, -1]
                values[tuple(index)] = 0.0
        return cls(grid, values, name)

    def unknowns(self) -> np.ndarray:
        if self.grid.periodic:
            return self.values.ravel().copy()
        return self.values[(slice(1, -1),) * self.grid.d].ravel().copy()

    def mean(self) -> float:
        return float(self.values.mean())


@dataclass
class SolverConfig:
    rel_tol: float = 1e-9
    max_iter: int = 5000
    preconditioner: str = 'multigrid'
    smoothing_steps: int = 2
    coarse_unknowns: int = 512

    def __post_init__(self):
        if not 0.0 < self.rel_tol <= 1e-3:
            raise ConfigError(f"rel_tol must lie in (0, 1e-3], got {self.rel_tol}")
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be positive, got {self.max_iter}")
        if self.preconditioner not in ('jacobi', 'multigrid'):
            raise ConfigError(f"preconditioner must be 'jacobi' or 'multigrid', got '{self.preconditioner}'")


@dataclass
class SparseSystem:
    """
    A = h^-2 [ sum_k D_k^T diag(a_kk on k-faces) D_k
             + sum_{i != j} C_i^T diag(a_ij at cell centres) C_j ]
    """
    matrix: sp.csr_matrix
    grid: UniformGrid
    face_coefficients: List[np.ndarray]
    cell_coefficients: Optional[np.ndarray] = None
    metadata: Dict[str, Any] = field(default_factory=dict)
    _multigrid: Optional['_MultigridHierarchy'] = field(default=None, repr=False)

    @property
    def is_diagonal(self) -> bool:
        return self.cell_coefficients is None

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.matrix @ u

    def flux(self, u: np.ndarray, shift: Optional[Sequence[float]] = None) -> Tuple[List[np.ndarray], Optional[List[np.ndarray]]]:
        """
        Discrete flux a (shift + grad u): face parts a_kk (shift_k + D_k u / h)
        and, for full tensors, cell parts sum_{j != k} a_kj (shift_j + C_j u / h)
        """
        grid = self.grid
        shift = np.zeros(grid.d) if shift is None else np.asarray(shift, dtype=float)
        faces = [self.face_coefficients[k] * (shift[k] + grid.face_difference(k) @ u / grid.h)
                 for k in range(grid.d)]
        if self.cell_coefficients is None:
            return faces, None
        gradients = [shift[j] + grid.cell_difference(j) @ u / grid.h for j in range(grid.d)]
        cells = []
        for k in range(grid.d):
            total = np.zeros(grid.n ** grid.d)
            for j in range(grid.d):
                if j != k:
                    total += self.cell_coefficients[:, k, j] * gradients[j]
            cells.append(total)
        return faces, cells

    def energy(self, u: np.ndarray) -> float:
        """u^T A u"""
        return float(u @ (self.matrix @ u))


def gradient_energy(grid: UniformGrid, u: np.ndarray) -> float:
    """sum_k |D_k u|^2 / h^2, the discrete Dirichlet energy of the identity operator"""
    return float(sum(np.sum((grid.face_difference(k) @ u) ** 2) for k in range(grid.d)) / grid.h ** 2)


def assemble_divform(coef: Any, grid: UniformGrid) -> SparseSystem:
    """
    Flux-form stencil of -div(a grad .): 2d+1 points for diagonal coefficients,
    compact 3^d points for full tensors. The coefficient is sampled at face
    midpoints (diagonal entries) and cell centres (off-diagonal entries).
    """
    if coef.d != grid.d:
        raise ConfigError(f"coefficient dimension {coef.d} does not match grid dimension {grid.d}")

    face_coefficients = []
    matrix = sp.csr_matrix((grid.num_unknowns, grid.num_unknowns))
    for k in range(grid.d):
        values = np.asarray(coef.diagonal(grid.face_points(k)), dtype=float)[:, k]
        if values.min() <= 0.0:
            where = grid.face_points(k)[int(np.argmin(values))]
            raise EllipticityError(f"non-positive coefficient {values.min():.3e} at face sample {where.tolist()}")
        face_coefficients.append(values)
        difference = grid.face_difference(k)
        matrix = matrix + difference.T @ sp.diags(values) @ difference

    cell_coefficients = None
    if not coef.is_diagonal:
        cell_coefficients = np.asarray(coef.evaluate(grid.cell_points()), dtype=float)
        if not np.allclose(cell_coefficients, np.swapaxes(cell_coefficients, 1, 2)):
            raise ConfigError("coefficient tensor must be symmetric")
        smallest = np.linalg.eigvalsh(cell_coefficients)[:, 0]
        if smallest.min() <= 0.0:
            where = grid.cell_points()[int(np.argmin(smallest))]
            raise EllipticityError(f"coefficient eigenvalue {smallest.min():.3e} at cell centre {where.tolist()}")
        for i in range(grid.d):
            for j in range(grid.d):
                if i != j:
                    matrix = matrix + grid.cell_difference(i).T @ sp.diags(cell_coefficients[:, i, j]) @ grid.cell_difference(j)

    matrix = matrix / grid.h ** 2
    # identical transposed entries regardless of summation order
    matrix = (0.5 * (matrix + matrix.T)).tocsr()
    matrix.eliminate_zeros()

    coefficient_hash = coef.coefficient_hash() if hasattr(coef, 'coefficient_hash') else None
    metadata = {'coefficient_hash': coefficient_hash, 'bc': grid.bc, 'h': grid.h, 'n': grid.n,
                'd': grid.d, 'nnz': int(matrix.nnz)}
    logger.debug(f"Assembled {grid.d}D {grid.bc} operator: {grid.num_unknowns} unknowns, {matrix.nnz} nonzeros")
    return SparseSystem(matrix, grid, face_coefficients, cell_coefficients, metadata)


def assemble_rhs_div(g_faces: Sequence[np.ndarray], grid: UniformGrid,
                     g_cells: Optional[Sequence[np.ndarray]] = None) -> np.ndarray:
    """
    Discrete div g = -h^-1 (sum_k D_k^T g_k + sum_k C_k^T c_k) on the unknowns,
    with g_k sampled on k-faces and the optional c_k at cell centres
    """
    if len(g_faces) != grid.d:
        raise ConfigError(f"need {grid.d} face components, got {len(g_faces)}")
    rhs = np.zeros(grid.num_unknowns)
    for k in range(grid.d):
        rhs -= grid.face_difference(k).T @ np.asarray(g_faces[k], dtype=float).ravel()
    if g_cells is not None:
        for k in range(grid.d):
            rhs -= grid.cell_difference(k).T @ np.asarray(g_cells[k], dtype=float).ravel()
    return rhs / grid.h


def sample_source(grid: UniformGrid, f: Union[float, Callable[[np.ndarray], np.ndarray]]) -> np.ndarray:
    """Source term sampled at the unknowns"""
    if callable(f):
        return np.asarray(f(grid.unknown_points()), dtype=float).ravel()
    return np.full(grid.num_unknowns, float(f))


class _MultigridHierarchy:
    """Galerkin V-cycle with weighted Jacobi smoothing"""

    OMEGA = 2.0 / 3.0

    def __init__(self, system: SparseSystem, config: SolverConfig):
        self.periodic = system.grid.periodic
        self.steps = config.smoothing_steps
        self.matrices = [system.matrix]
        self.prolongations = []
        grid = system.grid
        while (grid.num_unknowns > config.coarse_unknowns and grid.n % 2 == 0 and grid.n // 2 >= 4):
            prolongation = grid.prolongation()
            coarse = (prolongation.T @ self.matrices[-1] @ prolongation).tocsr()
            self.matrices.append((0.5 * (coarse + coarse.T)).tocsr())
            self.prolongations.append(prolongation)
            grid = grid.coarsen()
        self.inverse_diagonals = [1.0 / matrix.diagonal() for matrix in self.matrices]
        self.coarse_inverse = np.linalg.pinv(self.matrices[-1].toarray())
        logger.debug(f"Multigrid hierarchy with {len(self.matrices)} levels, coarsest {self.matrices[-1].shape[0]} unknowns")

    def _smooth(self, level: int, x: np.ndarray, b: np.ndarray) -> np.ndarray:
        matrix = self.matrices[level]
        for _ in range(self.steps):
            x = x + self.OMEGA * self.inverse_diagonals[level] * (b - matrix @ x)
        return x

    def vcycle(self, level: int, b: np.ndarray) -> np.ndarray:
        if level == len(self.matrices) - 1:
            return self.coarse_inverse @ b
        x = self._smooth(level, np.zeros_like(b), b)
        prolongation = self.prolongations[level]
        residual = b - self.matrices[level] @ x
        x = x + prolongation @ self.vcycle(level + 1, prolongation.T @ residual)
        return self._smooth(level, x, b)

    def operator(self) -> LinearOperator:
        size = self.matrices[0].shape[0]

        def apply(r):
            r = np.asarray(r, dtype=float).ravel()
            if self.periodic:
                r = r - r.mean()
            z = self.vcycle(0, r)
            return z - z.mean() if self.periodic else z

        return LinearOperator((size, size), matvec=apply, dtype=float)


def _jacobi_operator(system: SparseSystem) -> LinearOperator:
    inverse = 1.0 / system.matrix.diagonal()
    size = inverse.size
    periodic = system.grid.periodic

    def apply(r):
        r = np.asarray(r, dtype=float).ravel()
        if periodic:
            r = r - r.mean()
        z = inverse * r
        return z - z.mean() if periodic else z

    return LinearOperator((size, size), matvec=apply, dtype=float)


def prepare_preconditioner(system: SparseSystem, config: SolverConfig) -> LinearOperator:
    """Preconditioner for CG; the multigrid hierarchy is built once per system"""
    if config.preconditioner == 'multigrid':
        if system._multigrid is None:
            system._multigrid = _MultigridHierarchy(system, config)
        return system._multigrid.operator()
    return _jacobi_operator(system)


class SolveResult(NamedTuple):
    field: GridField
    residual: float
    iterations: int
    projection: float


def solve(system: SparseSystem, rhs: np.ndarray, config: Optional[SolverConfig] = None) -> SolveResult:
    """
    Preconditioned CG. Periodic right-hand sides are projected to mean zero
    (the removed mean is reported) and periodic solutions are returned mean-zero.
    """
    config = config or SolverConfig()
    grid = system.grid
    b = np.asarray(rhs, dtype=float).ravel().copy()
    if b.size != grid.num_unknowns:
        raise ConfigError(f"rhs has {b.size} entries, system has {grid.num_unknowns} unknowns")

    projection = 0.0
    if grid.periodic:
        projection = float(b.mean())
        b -= projection
        if abs(projection) > 1e-12 * max(1.0, float(np.abs(b).max(initial=0.0))):
            logger.warning(f"Periodic rhs projected to mean zero (removed mean {projection:.3e})")

    norm_b = float(np.linalg.norm(b))
    if norm_b == 0.0:
        return SolveResult(GridField.zeros(grid), 0.0, 0, abs(projection))

    preconditioner = prepare_preconditioner(system, config)

    iterations = 0

    def count(_):
        nonlocal iterations
        iterations += 1

    x, info = cg(system.matrix, b, rtol=config.rel_tol, atol=0.0, maxiter=config.max_iter,
                 M=preconditioner, callback=count)
    if grid.periodic:
        x -= x.mean()
    residual = float(np.linalg.norm(b - system.matrix @ x)) / norm_b

    if info != 0:
        logger.error(f"CG stopped after {iterations} iterations with relative residual {residual:.3e}")
        raise ConvergenceError(f"CG did not reach rel_tol={config.rel_tol:.1e} in {config.max_iter} iterations",
                               best_residual=residual, iterations=iterations)
    logger.debug(f"CG converged in {iterations} iterations, residual {residual:.3e}")
    return SolveResult(GridField.from_unknowns(grid, x), residual, iterations, abs(projection))


def _laplacian_symbol(grid: UniformGrid) -> np.ndarray:
    """Eigenvalues of the identity-coefficient operator in the Fourier / sine basis"""
    count = grid.unknown_shape[0]
    if grid.periodic:
        one = 4.0 * np.sin(np.pi * np.arange(count) / grid.n) ** 2 / grid.h ** 2
    else:
        one = 4.0 * np.sin(np.pi * np.arange(1, count + 1) / (2 * grid.n)) ** 2 / grid.h ** 2
    return reduce(np.add.outer, [one] * grid.d)


def poisson_periodic_spectral(rhs: GridField) -> GridField:
    """Exact inverse of the periodic five-point Laplacian by FFT; mean-zero output"""
    grid = rhs.grid
    if not grid.periodic:
        raise ConfigError("periodic spectral solve needs a periodic grid")
    transformed = fft.fftn(rhs.values - rhs.values.mean())
    symbol = _laplacian_symbol(grid)
    symbol.flat[0] = 1.0
    transformed /= symbol
    transformed.flat[0] = 0.0
    return GridField(grid, fft.ifftn(transformed).real, rhs.name)


def poisson_dirichlet_spectral(rhs: GridField) -> GridField:
    """Exact inverse of the Dirichlet five-point Laplacian by the type-I sine transform"""
    grid = rhs.grid
    if grid.periodic:
        raise ConfigError("Dirichlet spectral solve needs a Dirichlet grid")
    interior = rhs.values[(slice(1, -1),) * grid.d]
    transformed = fft.dstn(interior, type=1) / _laplacian_symbol(grid)
    return GridField.from_unknowns(grid, fft.idstn(transformed, type=1).ravel(), rhs.name)


class NormReport(NamedTuple):
    l2: float
    h1_seminorm: float
    gradient: np.ndarray


def _extended_values(field: GridField) -> np.ndarray:
    """Values on (n+1)^d nodes, periodic fields wrapped once"""
    if field.grid.periodic:
        return np.pad(field.values, [(0, 1)] * field.grid.d, mode='wrap')
    return field.values


def norms_and_gradient(field: GridField, subdomain: Optional[Tuple[Sequence[float], Sequence[float]]] = None) -> NormReport:
    """
    L2 norm and H1 seminorm of a field over a grid-aligned sub-box by cell
    quadrature, plus its centred-difference gradient at the sub-box nodes
    """
    grid = field.grid
    d = grid.d
    if subdomain is None:
        starts, stops = [0] * d, [grid.n] * d
    else:
        lo = np.broadcast_to(np.asarray(subdomain[0], dtype=float), (d,))
        hi = np.broadcast_to(np.asarray(subdomain[1], dtype=float), (d,))
        starts = [grid.index_of(c) for c in lo]
        stops = [grid.index_of(c) for c in hi]
        if any(a < 0 or b > grid.n or b <= a for a, b in zip(starts, stops)):
            raise GridAlignmentError(f"sub-box {lo.tolist()}..{hi.tolist()} is not inside the grid box")

    window = tuple(slice(a, b + 1) for a, b in zip(starts, stops))
    values = _extended_values(field)
    sub = values[window]
    cell_volume = grid.h ** d

    averaged = sub
    for axis in range(d):
        averaged = 0.5 * (np.take(averaged, range(1, averaged.shape[axis]), axis=axis)
                          + np.take(averaged, range(averaged.shape[axis] - 1), axis=axis))
    l2 = math.sqrt(float(np.sum(averaged ** 2)) * cell_volume)

    energy = 0.0
    for k in range(d):
        squared = (np.diff(sub, axis=k) / grid.h) ** 2
        for axis in range(d):
            if axis != k:
                squared = 0.5 * (np.take(squared, range(1, squared.shape[axis]), axis=axis)
                                 + np.take(squared, range(squared.shape[axis] - 1), axis=axis))
        energy += float(np.sum(squared))
    h1 = math.sqrt(energy * cell_volume)

    if grid.periodic:
        gradient = np.stack([(np.roll(field.values, -1, axis=k) - np.roll(field.values, 1, axis=k)) / (2 * grid.h)
                             for k in range(d)])
        gradient = np.stack([np.pad(component, [(0, 1)] * d, mode='wrap') for component in gradient])
    else:
        gradient = np.stack(np.gradient(values, grid.h, edge_order=2)) if d > 1 else \
            np.gradient(values, grid.h, edge_order=2)[None, :]
    gradient = gradient[(slice(None),) + window]
    return NormReport(l2, h1, gradient)


def write_field(path: Union[str, Path], field: GridField) -> Path:
    """Raw dump: 32-byte header (magic, d, bc, n per axis, box lo/hi) then little-endian float64 node values"""
    grid = field.grid
    if grid.d > 3:
        raise ConfigError("field dumps support d <= 3")
    if grid.n > np.iinfo(np.uint16).max:
        raise ConfigError(f"field dumps support n <= {np.iinfo(np.uint16).max}, got {grid.n}")
    header = np.zeros(1, dtype=FIELD_HEADER)
    header['magic'] = FIELD_MAGIC
    header['d'] = grid.d
    header['bc'] = BC_CODES[grid.bc]
    header['n'][0, :grid.d] = grid.n
    header['lo'] = grid.lo
    header['hi'] = grid.hi
    path = Path(path)
    with open(path, 'wb') as handle:
        handle.write(header.tobytes())
        handle.write(np.ascontiguousarray(field.values, dtype='<f8').tobytes())
    return path


def read_field(path: Union[str, Path]) -> GridField:
    """Read a raw dump back onto the grid described by its header"""
    raw = Path(path).read_bytes()
    header = np.frombuffer(raw[:FIELD_HEADER.itemsize], dtype=FIELD_HEADER)[0]
    if header['magic'] != FIELD_MAGIC:
        raise ConfigError(f"{path} is not a field dump")
    d = int(header['d'])
    bc = {code: name for name, code in BC_CODES.items()}[int(header['bc'])]
    n = int(header['n'][0])
    grid = UniformGrid(d, n, float(header['lo']), float(header['hi']), bc)
    values = np.frombuffer(raw[FIELD_HEADER.itemsize:], dtype='<f8').astype(float)
    return GridField(grid, values.reshape(grid.node_shape))
