"""
Coefficient Builder
Periodic background coefficients, localized defect profiles placed on a defect
point set, and the cell-norm / average-decay / tail diagnostics of the
perturbed coefficient
"""

import hashlib
import json
import math
from typing import Dict, Tuple, Any, Optional, Callable, Sequence

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from defect_geometry import DefectGenerator, DefectPointSet
from lab_errors import ConfigError, EllipticityError, ResolutionError
from rate_fitting import fit_loglog
import logging

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi


def _canonical_hash(description: Dict[str, Any]) -> str:
    payload = json.dumps(description, sort_keys=True, separators=(',', ':'), default=float)
    return hashlib.sha256(payload.encode('utf-8')).hexdigest()


def _as_points(x: np.ndarray, d: int) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape(-1, d)


def _diag_matrix(diagonal: np.ndarray) -> np.ndarray:
    """(N, d) diagonals to (N, d, d) matrices"""
    n, d = diagonal.shape
    out = np.zeros((n, d, d))
    out[:, np.arange(d), np.arange(d)] = diagonal
    return out


class PeriodicCoefficient:
    """
    Closed-form 1-periodic coefficient, diagonal in every preset.
    Presets: constant, sin1d, laminate2d, product_cos, checker3d.
    """

    def __init__(self, d: int, preset: str = 'constant', value: float = 1.0):
        if int(d) != d or d < 1:
            raise ConfigError(f"dimension must be a positive integer, got {d}")
        self.d = int(d)
        self.preset = preset
        self.value = float(value)
        self.is_diagonal = True
        self._init_presets()
        if preset not in self.presets:
            raise ConfigError(f"unknown periodic preset '{preset}', choose from {sorted(self.presets)}")
        required = self.presets[preset]['dimension']
        if required is not None and required != self.d:
            raise ConfigError(f"preset '{preset}' needs d={required}, got d={self.d}")
        if preset == 'constant' and self.value <= 0:
            raise ConfigError(f"constant coefficient must be positive, got {self.value}")

    def _init_presets(self):
        """Closed-form diagonal entries of each preset"""
        self.presets = {
            'constant': {
                'dimension': None,
                'diagonal': lambda y: np.full(y.shape, self.value),
            },
            'sin1d': {
                'dimension': None,
                'diagonal': lambda y: np.repeat(2.0 + np.sin(TWO_PI * y[:, :1]), self.d, axis=1),
            },
            'laminate2d': {
                'dimension': 2,
                'diagonal': lambda y: np.stack([2.0 + np.cos(TWO_PI * y[:, 0]),
                                                np.full(y.shape[0], 3.0)], axis=1),
            },
            'product_cos': {
                'dimension': None,
                'diagonal': lambda y: np.repeat(np.prod(2.0 + np.cos(TWO_PI * y), axis=1, keepdims=True),
                                                self.d, axis=1),
            },
            'checker3d': {
                'dimension': 3,
                'diagonal': lambda y: np.repeat(
                    2.0 + np.prod(np.sin(TWO_PI * y), axis=1, keepdims=True), 3, axis=1),
            },
        }

    def diagonal(self, x: np.ndarray) -> np.ndarray:
        y = _as_points(x, self.d)
        return self.presets[self.preset]['diagonal'](y)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        return _diag_matrix(self.diagonal(x))

    def bounds(self, samples_per_axis: int = 64) -> Tuple[float, float]:
        """Harmonic-mean floor and arithmetic-mean ceiling of the diagonal over one period"""
        axis = (np.arange(samples_per_axis) + 0.5) / samples_per_axis
        mesh = np.stack(np.meshgrid(*[axis] * self.d, indexing='ij'), axis=-1).reshape(-1, self.d)
        values = self.diagonal(mesh)
        harmonic = 1.0 / np.mean(1.0 / values, axis=0)
        arithmetic = np.mean(values, axis=0)
        return float(harmonic.min()), float(arithmetic.max())

    def describe(self) -> Dict[str, Any]:
        return {'preset': self.preset, 'd': self.d, 'value': self.value}


class ConstantCoefficient:
    """Constant symmetric tensor, e.g. a homogenized coefficient"""

    def __init__(self, matrix: np.ndarray):
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        if matrix.shape[0] != matrix.shape[1]:
            raise ConfigError(f"coefficient matrix must be square, got {matrix.shape}")
        if not np.allclose(matrix, matrix.T, rtol=0, atol=1e-12 * np.abs(matrix).max()):
            raise ConfigError("coefficient matrix must be symmetric")
        self.matrix = 0.5 * (matrix + matrix.T)
        self.d = matrix.shape[0]
        off = self.matrix - np.diag(np.diag(self.matrix))
        self.is_diagonal = bool(np.all(off == 0.0))

    def diagonal(self, x: np.ndarray) -> np.ndarray:
        n = _as_points(x, self.d).shape[0]
        return np.tile(np.diag(self.matrix), (n, 1))

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        n = _as_points(x, self.d).shape[0]
        return np.broadcast_to(self.matrix, (n, self.d, self.d)).copy()

    def describe(self) -> Dict[str, Any]:
        return {'constant': self.matrix.tolist()}

    def coefficient_hash(self) -> str:
        return _canonical_hash(self.describe())


class DefectProfile:
    """
    Radial defect profile times a symmetric amplitude matrix.
      bump:      exp(1 - 1/(1 - (|z|/rho)^2)) on |z| < rho, rho <= 1/2
      algebraic: (1 + |z|/rho)^(-beta) on |z| < r_cut
    """

    def __init__(self, d: int, kind: str = 'bump', amplitude: Any = 1.0,
                 rho: float = 0.5, beta: float = 2.0, r_cut: Optional[float] = None):
        self.d = int(d)
        self.kind = kind
        if kind not in ('bump', 'algebraic'):
            raise ConfigError(f"unknown profile kind '{kind}'")
        if not rho > 0:
            raise ConfigError(f"rho must be positive, got {rho}")
        if kind == 'bump' and rho > 0.5:
            raise ConfigError(f"bump support radius must be <= 1/2, got {rho}")
        if kind == 'algebraic':
            if not beta > 0:
                raise ConfigError(f"beta must be positive, got {beta}")
            if r_cut is None or not r_cut > 0:
                raise ConfigError("algebraic profiles need a positive cutoff radius r_cut")

        amplitude = np.asarray(amplitude, dtype=float)
        if amplitude.ndim == 0:
            amplitude = float(amplitude) * np.eye(self.d)
        if amplitude.shape != (self.d, self.d):
            raise ConfigError(f"amplitude must be scalar or {self.d}x{self.d}, got {amplitude.shape}")
        if not np.allclose(amplitude, amplitude.T):
            raise ConfigError("amplitude matrix must be symmetric")

        self.amplitude = amplitude
        self.rho = float(rho)
        self.beta = float(beta)
        self.r_cut = float(r_cut) if r_cut is not None else None
        self.is_diagonal = bool(np.all(amplitude == np.diag(np.diag(amplitude))))

    @property
    def reach(self) -> float:
        """Radius outside which the profile vanishes"""
        return self.rho if self.kind == 'bump' else self.r_cut

    def shape(self, radius: np.ndarray) -> np.ndarray:
        """Radial factor of the profile"""
        radius = np.asarray(radius, dtype=float)
        if self.kind == 'bump':
            t = radius / self.rho
            out = np.zeros_like(t)
            inside = t < 1.0
            out[inside] = np.exp(1.0 - 1.0 / (1.0 - t[inside] ** 2))
            return out
        out = (1.0 + radius / self.rho) ** (-self.beta)
        return np.where(radius < self.r_cut, out, 0.0)

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        z = _as_points(z, self.d)
        return self.shape(np.linalg.norm(z, axis=1))[:, None, None] * self.amplitude

    def lr_membership(self, r: float) -> bool:
        """Whether the uncut profile lies in L^r(R^d): always for bumps, beta r > d otherwise"""
        if self.kind == 'bump':
            return True
        return self.beta * r > self.d

    def describe(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'amplitude': self.amplitude.tolist(), 'rho': self.rho,
                'beta': self.beta, 'r_cut': self.r_cut}


class PerturbedCoefficient:
    """
    a = a_per + sum_p s_p profile(x - x_p), with s_p = 1 + modulation 2^(-|p|).
    With modulation 0 every defect is an identical copy of the limit profile.
    """

    def __init__(self, periodic: PeriodicCoefficient, profile: Optional[DefectProfile] = None,
                 point_set: Optional[DefectGenerator] = None, modulation: float = 0.0,
                 lambda_min: float = 1e-8):
        self.periodic = periodic
        self.profile = profile
        self.point_set = point_set
        self.modulation = float(modulation)
        self.lambda_min = float(lambda_min)
        self.lambda_check = None
        self.d = periodic.d

        if profile is not None:
            if point_set is None:
                raise ConfigError("a defect profile needs a point set")
            if profile.d != self.d or point_set.d != self.d:
                raise ConfigError("periodic part, profile and point set must share the dimension")
        self.is_diagonal = periodic.is_diagonal and (profile is None or profile.is_diagonal)

    @property
    def has_defects(self) -> bool:
        return self.profile is not None and bool(np.any(self.profile.amplitude != 0.0))

    def defect_scales(self, ranks: np.ndarray) -> np.ndarray:
        if self.modulation == 0.0:
            return np.ones(len(ranks))
        norms = self.point_set.max_norms[ranks].astype(float)
        return 1.0 + self.modulation * np.exp2(-norms)

    def disjoint_supports(self) -> bool:
        """Defect supports never overlap (bumps narrower than half the smallest gap)"""
        if self.profile is None:
            return True
        if self.profile.kind != 'bump':
            return False
        points = self.point_set.points
        if len(points) < 2:
            return True
        gaps, _ = cKDTree(points).query(points, k=2)
        return bool(2.0 * self.profile.reach < gaps[:, 1].min())

    def _defect_shape_sum(self, y: np.ndarray) -> Tuple[np.ndarray, bool]:
        """
        Sum over defects of s_p * shape(|y - x_p|), used when the amplitude is shared.
        Returns the scalar field and whether any defect was active.
        """
        total = np.zeros(y.shape[0])
        if not self.has_defects or y.shape[0] == 0:
            return total, False
        reach = self.profile.reach
        ranks = self.point_set.points_within(y.min(axis=0), y.max(axis=0), reach)
        if len(ranks) == 0:
            return total, False
        scales = self.defect_scales(ranks)
        centers = self.point_set.points[ranks]

        if self.profile.kind == 'bump' and y.shape[0] > 64:
            tree = cKDTree(y)
            for center, scale, hits in zip(centers, scales, tree.query_ball_point(centers, reach)):
                if hits:
                    hits = np.asarray(hits)
                    radius = np.linalg.norm(y[hits] - center, axis=1)
                    total[hits] += scale * self.profile.shape(radius)
        else:
            for center, scale in zip(centers, scales):
                radius = np.linalg.norm(y - center, axis=1)
                total += scale * self.profile.shape(radius)
        return total, True

    def defect_part(self, x: np.ndarray) -> np.ndarray:
        """Defect contribution as (N, d, d) matrices"""
        y = _as_points(x, self.d)
        total, _ = self._defect_shape_sum(y)
        if self.profile is None:
            return np.zeros((y.shape[0], self.d, self.d))
        return total[:, None, None] * self.profile.amplitude

    def defect_diagonal(self, x: np.ndarray) -> np.ndarray:
        y = _as_points(x, self.d)
        total, _ = self._defect_shape_sum(y)
        if self.profile is None:
            return np.zeros((y.shape[0], self.d))
        return total[:, None] * np.diag(self.profile.amplitude)[None, :]

    def diagonal(self, x: np.ndarray, floor: Optional[float] = None) -> np.ndarray:
        """Diagonal of a = a_per + defects; only valid when is_diagonal"""
        y = _as_points(x, self.d)
        values = self.periodic.diagonal(y) + self.defect_diagonal(y)
        self._check_floor(values.min(axis=1) if len(values) else values, y, floor)
        return values

    def evaluate(self, x: np.ndarray, floor: Optional[float] = None) -> np.ndarray:
        """Full (N, d, d) coefficient, checked against floor (lambda_min when None)"""
        y = _as_points(x, self.d)
        if self.is_diagonal:
            return _diag_matrix(self.diagonal(y, floor))
        values = self.periodic.evaluate(y) + self.defect_part(y)
        self._check_floor(np.linalg.eigvalsh(values)[:, 0] if len(values) else np.zeros(0), y, floor)
        return values

    def _check_floor(self, smallest: np.ndarray, y: np.ndarray, floor: Optional[float] = None):
        floor = self.lambda_min if floor is None else floor
        if smallest.size and smallest.min() < floor:
            where = y[int(np.argmin(smallest))]
            raise EllipticityError(
                f"coefficient eigenvalue {smallest.min():.3e} below floor {floor:.3e} at {where.tolist()}"
            )

    def limit_profile_at(self, p: Sequence[int]) -> Callable[[np.ndarray], np.ndarray]:
        """The unmodulated profile translated to the defect of index p"""
        center = self.point_set.point_of(p)
        return lambda x: self.profile.evaluate(_as_points(x, self.d) - center)

    def describe(self) -> Dict[str, Any]:
        return {
            'periodic': self.periodic.describe(),
            'profile': self.profile.describe() if self.profile is not None else None,
            'point_set': self.point_set.describe() if self.point_set is not None else None,
            'modulation': self.modulation,
        }

    def coefficient_hash(self) -> str:
        return _canonical_hash(self.describe())


class ScaledCoefficient:
    """The oscillating coefficient x -> a(x / eps)"""

    def __init__(self, coefficient: Any, eps: float):
        if not eps > 0:
            raise ConfigError(f"eps must be positive, got {eps}")
        self.base = coefficient
        self.eps = float(eps)
        self.d = coefficient.d
        self.is_diagonal = coefficient.is_diagonal

    def diagonal(self, x: np.ndarray) -> np.ndarray:
        return self.base.diagonal(_as_points(x, self.d) / self.eps)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        return self.base.evaluate(_as_points(x, self.d) / self.eps)

    def describe(self) -> Dict[str, Any]:
        return {'scaled': self.base.describe(), 'eps': self.eps}

    def coefficient_hash(self) -> str:
        return _canonical_hash(self.describe())


def eval_coefficient(coef: PerturbedCoefficient, x: Sequence[float]) -> np.ndarray:
    """Symmetric matrix a(x) at a single point"""
    return coef.evaluate(np.asarray(x, dtype=float).reshape(1, coef.d))[0]


def _pointwise_magnitude(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        return np.abs(values)
    return np.sqrt(np.sum(values.reshape(values.shape[0], -1) ** 2, axis=1))


def _midpoint_grid(lo: np.ndarray, hi: np.ndarray, resolution: float,
                   max_points: int) -> Tuple[np.ndarray, float]:
    """Cell-centred nodes covering [lo, hi] and the volume of one cell"""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    counts = np.maximum(1, np.ceil((hi - lo) / resolution).astype(int))
    total = int(np.prod(counts))
    if total > max_points:
        raise ResolutionError(f"quadrature region needs {total} points, limit is {max_points}")
    steps = (hi - lo) / counts
    axes = [lo[k] + (np.arange(counts[k]) + 0.5) * steps[k] for k in range(lo.size)]
    mesh = np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1).reshape(-1, lo.size)
    return mesh, float(np.prod(steps))


def cell_norm(f: Callable[[np.ndarray], np.ndarray], point_set: DefectPointSet, p: Sequence[int],
              r: float, resolution: float, region: Optional[Tuple[np.ndarray, np.ndarray]] = None,
              subtract: Optional[Callable[[np.ndarray], np.ndarray]] = None,
              max_points: int = 4_000_000) -> float:
    """
    L^r norm of f (or of f - subtract) over the Voronoi cell of p, by midpoint
    quadrature on the nodes classified into the cell; region narrows the box
    when f is known to vanish outside it.
    """
    if not 1.0 < r < math.inf:
        raise ConfigError(f"exponent r must lie in (1, inf), got {r}")
    if not resolution > 0:
        raise ConfigError(f"resolution must be positive, got {resolution}")
    rank = point_set.rank_of(p)
    lo, hi, _ = point_set.cell_bounding_box(p)
    if region is not None:
        lo = np.maximum(lo, region[0])
        hi = np.minimum(hi, region[1])
        if np.any(hi <= lo):
            return 0.0

    nodes, volume = _midpoint_grid(lo, hi, resolution, max_points)
    ranks, _ = point_set.nearest_batch(nodes)
    nodes = nodes[ranks == rank]
    if len(nodes) == 0:
        return 0.0
    values = f(nodes)
    if subtract is not None:
        values = values - subtract(nodes)
    magnitude = _pointwise_magnitude(values)
    return float((np.sum(magnitude ** r) * volume) ** (1.0 / r))


def cell_norm_table(coef: PerturbedCoefficient, indices: Sequence[Sequence[int]],
                    r_values: Sequence[float] = (2.0,), resolution: float = 0.02) -> pd.DataFrame:
    """Cell norms of the defect part and of its distance to the translated limit profile"""
    rows = []
    reach = coef.profile.reach
    for p in indices:
        center = coef.point_set.point_of(p)
        region = (center - reach, center + reach) if coef.disjoint_supports() else None
        for r in r_values:
            norm = cell_norm(coef.defect_part, coef.point_set, p, r, resolution, region)
            residual = cell_norm(coef.defect_part, coef.point_set, p, r, resolution, region,
                                 subtract=coef.limit_profile_at(p))
            rows.append({'index': ' '.join(str(int(c)) for c in p), 'r': float(r),
                         'cell_norm': norm, 'residual_norm': residual})
    return pd.DataFrame(rows, columns=['index', 'r', 'cell_norm', 'residual_norm'])


def _ball_volume(d: int, radius: float) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * radius ** d


def average_decay(f: Callable[[np.ndarray], np.ndarray], x0: Sequence[float], radii: Sequence[float],
                  resolution: float, support: Optional[Tuple[np.ndarray, float]] = None,
                  max_points: int = 4_000_000) -> Dict[str, Any]:
    """
    Mean of |f| over the balls B_R(x0) with the log-log slope and the ratio to
    (log R / R^d)^(1/2). With support = (centers, reach) and disjoint supports
    the quadrature runs only over the support balls.
    """
    radii = [float(R) for R in radii]
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ConfigError("radii must be increasing")
    x0 = np.asarray(x0, dtype=float).ravel()
    d = x0.size

    integrals = np.zeros(len(radii))
    if support is not None:
        centers, reach = support
        centers = np.asarray(centers, dtype=float).reshape(-1, d)
        relevant = np.linalg.norm(centers - x0, axis=1) < radii[-1] + reach
        for center in centers[relevant]:
            nodes, volume = _midpoint_grid(center - reach, center + reach, resolution, max_points)
            magnitude = _pointwise_magnitude(f(nodes))
            distance = np.linalg.norm(nodes - x0, axis=1)
            for k, R in enumerate(radii):
                integrals[k] += np.sum(magnitude[distance < R]) * volume
    else:
        nodes, volume = _midpoint_grid(x0 - radii[-1], x0 + radii[-1], resolution, max_points)
        magnitude = _pointwise_magnitude(f(nodes))
        distance = np.linalg.norm(nodes - x0, axis=1)
        for k, R in enumerate(radii):
            integrals[k] = np.sum(magnitude[distance < R]) * volume

    means = np.array([integrals[k] / _ball_volume(d, R) for k, R in enumerate(radii)])
    bound = np.array([math.sqrt(max(math.log(R), 1e-300) / R ** d) for R in radii])
    ratios = means / bound

    table = pd.DataFrame({'R': radii, 'mean': means, 'bound_ratio': ratios})
    result = {'table': table, 'slope': float('nan'), 'r2': float('nan')}
    if np.count_nonzero(means > 0) >= 2:
        fit = fit_loglog(radii, means)
        result.update(slope=fit['slope'], r2=fit['r2'])
    positive = ratios[ratios > 0]
    result['ratio_band'] = float(positive.max() / positive.min()) if positive.size else float('nan')
    result['bound_constant'] = float(ratios.max())
    return result


def coefficient_average_decay(coef: PerturbedCoefficient, x0: Sequence[float], radii: Sequence[float],
                              resolution: float = 0.02) -> Dict[str, Any]:
    """Average decay of the defect part, using support-restricted quadrature when possible"""
    support = None
    if coef.disjoint_supports():
        support = (coef.point_set.points, coef.profile.reach)
    return average_decay(coef.defect_part, x0, radii, resolution, support)


def tail_uniform(coef: PerturbedCoefficient, R: float, index_bound: int,
                 resolution: float = 0.02, max_points: int = 4_000_000) -> float:
    """
    sup over p != q of || f - profile(. - x_p) ||_{L2(V_q minus B_R(x_q))}
    for the defect part f, over indices with |q| <= index_bound.
    """
    if not R > 0:
        raise ConfigError(f"R must be positive, got {R}")
    point_set = coef.point_set
    if index_bound > point_set.index_bound - 1:
        raise ConfigError(f"index_bound {index_bound} needs a point set enumerated to {index_bound + 1}")
    reach = coef.profile.reach
    compact = coef.disjoint_supports()
    limit = coef.profile

    supremum = 0.0
    for rank in np.nonzero(point_set.max_norms <= index_bound)[0]:
        q = tuple(int(c) for c in point_set.indices[rank])
        center = point_set.points[rank]
        lo, hi, _ = point_set.cell_bounding_box(q)
        if compact:
            lo = np.maximum(lo, center - reach)
            hi = np.minimum(hi, center + reach)
        if np.any(hi <= lo):
            continue
        nodes, volume = _midpoint_grid(lo, hi, resolution, max_points)
        ranks, _ = point_set.nearest_batch(nodes)
        keep = (ranks == rank) & (np.linalg.norm(nodes - center, axis=1) >= R)
        nodes = nodes[keep]
        if len(nodes) == 0:
            continue

        values = coef.defect_part(nodes)
        # a far index contributes no profile on this cell
        supremum = max(supremum, math.sqrt(np.sum(_pointwise_magnitude(values) ** 2) * volume))
        for other in point_set.points_within(nodes.min(axis=0), nodes.max(axis=0), reach):
            if other == rank:
                continue
            shifted = limit.evaluate(nodes - point_set.points[other])
            difference = _pointwise_magnitude(values - shifted)
            supremum = max(supremum, math.sqrt(np.sum(difference ** 2) * volume))
    return supremum


def ellipticity_floor(coef: PerturbedCoefficient, sample_density: int = 16,
                      index_bound: Optional[int] = None) -> float:
    """
    Smallest eigenvalue of a over the periodic cell grid and over grids
    covering every enumerated defect support; stored as coef.lambda_check.
    """
    d = coef.d
    axis = np.arange(sample_density) / sample_density
    samples = [np.stack(np.meshgrid(*[axis] * d, indexing='ij'), axis=-1).reshape(-1, d)]

    if coef.has_defects:
        point_set = coef.point_set
        bound = point_set.index_bound if index_bound is None else index_bound
        reach = min(coef.profile.reach, 2.0)
        offsets = np.linspace(-reach, reach, 2 * sample_density + 1)
        local = np.stack(np.meshgrid(*[offsets] * d, indexing='ij'), axis=-1).reshape(-1, d)
        for rank in np.nonzero(point_set.max_norms <= bound)[0]:
            samples.append(point_set.points[rank] + local)

    points = np.vstack(samples)
    if coef.is_diagonal:
        floor = float(coef.diagonal(points, floor=-math.inf).min())
    else:
        floor = float(np.linalg.eigvalsh(coef.evaluate(points, floor=-math.inf))[:, 0].min())

    if floor <= 0.0:
        raise EllipticityError(f"coefficient is not elliptic: smallest sampled eigenvalue {floor:.3e}")
    coef.lambda_check = floor
    logger.info(f"Ellipticity floor {floor:.6f} over {len(points)} samples")
    return floor


def holder_quotient(coef: Any, alpha: float, spacing: float = 1e-3,
                    box: Tuple[float, float] = (-2.0, 2.0), samples_per_axis: int = 41) -> float:
    """Largest sampled |a(x + h e_i) - a(x)| / h^alpha; a diagnostic, not a certificate"""
    if not 0.0 < alpha <= 1.0:
        raise ConfigError(f"alpha must lie in (0, 1], got {alpha}")
    d = coef.d
    axis = np.linspace(box[0], box[1], samples_per_axis)
    base = np.stack(np.meshgrid(*[axis] * d, indexing='ij'), axis=-1).reshape(-1, d)
    at_base = coef.evaluate(base)
    worst = 0.0
    for k in range(d):
        shifted = base.copy()
        shifted[:, k] += spacing
        jump = _pointwise_magnitude(coef.evaluate(shifted) - at_base)
        worst = max(worst, float(jump.max()) / spacing ** alpha)
    return worst
