"""
Defect Geometry
Dyadic defect point set, its implicit Voronoi diagram, dilated cells and the
numerical certification of the sparsity assumptions on the set
"""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, asdict
from functools import lru_cache
from typing import Dict, List, Tuple, Any, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree
from scipy.stats import qmc

from lab_errors import ConfigError, CertificationError, ResolutionError
from rate_fitting import fit_line
import logging

logger = logging.getLogger(__name__)


def in_index_set(p: Sequence[int], c0: float) -> bool:
    """Membership rule: max of nonzero |p_i| <= c0 + min of nonzero |p_i|"""
    magnitudes = [abs(int(c)) for c in p if int(c) != 0]
    if not magnitudes:
        return True
    return max(magnitudes) <= c0 + min(magnitudes)


def _membership_mask(indices: np.ndarray, c0: float) -> np.ndarray:
    """Vectorised in_index_set over the rows of an integer array"""
    magnitudes = np.abs(indices)
    nonzero = magnitudes > 0
    largest = np.where(nonzero, magnitudes, 0).max(axis=1)
    smallest = np.where(nonzero, magnitudes, np.iinfo(np.int64).max).min(axis=1)
    return (~nonzero.any(axis=1)) | (largest <= c0 + smallest)


@lru_cache(maxsize=64)
def _halton(n: int, d: int) -> np.ndarray:
    """Deterministic low-discrepancy points in [0, 1)^d"""
    sampler = qmc.Halton(d=d, scramble=False)
    points = sampler.random(n)
    points.setflags(write=False)
    return points


def ball_samples(center: np.ndarray, radius: float, n: int) -> np.ndarray:
    """At least n deterministic points inside the open ball B_radius(center)"""
    center = np.asarray(center, dtype=float)
    d = center.size
    unit_volume = math.pi ** (d / 2) / math.gamma(d / 2 + 1) / 2 ** d
    draw = int(math.ceil(1.3 * n / unit_volume)) + 8
    cube = 2.0 * _halton(draw, d) - 1.0
    inside = cube[np.sum(cube ** 2, axis=1) < 1.0]
    return center + radius * inside


def sphere_samples(center: np.ndarray, radius: float, n: int) -> np.ndarray:
    """Deterministic points on the sphere of the given radius"""
    center = np.asarray(center, dtype=float)
    d = center.size
    if d == 1:
        directions = np.array([[-1.0], [1.0]])
    elif d == 2:
        angles = 2.0 * math.pi * np.arange(n) / n
        directions = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    else:
        cube = 2.0 * _halton(n + 1, d)[1:] - 1.0
        norms = np.linalg.norm(cube, axis=1)
        directions = cube[norms > 1e-12] / norms[norms > 1e-12, None]
    return center + radius * directions


def box_samples(lo: np.ndarray, hi: np.ndarray, n: int) -> np.ndarray:
    """Deterministic points inside the box [lo, hi]"""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    return lo + (hi - lo) * _halton(n, lo.size)


class DefectGenerator(ABC):
    """
    Interface for point sets carrying defects.
    Implementations enumerate their points in a fixed order (rank) and answer
    nearest-point queries with a deterministic tie-break on that order.
    """

    d: int
    index_bound: int

    @property
    @abstractmethod
    def indices(self) -> np.ndarray:
        """Enumerated indices, one row per point, in rank order"""

    @property
    @abstractmethod
    def points(self) -> np.ndarray:
        """Enumerated points, aligned with indices"""

    @abstractmethod
    def nearest_batch(self, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Rank of the nearest point and distance to it, for each row of y"""

    def enumerate(self) -> Tuple[np.ndarray, np.ndarray]:
        """(indices, points) in rank order"""
        return self.indices, self.points

    def nearest(self, y: Sequence[float]) -> Tuple[Tuple[int, ...], float]:
        """Index of the point closest to y and the distance to it"""
        ranks, distances = self.nearest_batch(np.asarray(y, dtype=float))
        return tuple(int(c) for c in self.indices[ranks[0]]), float(distances[0])

    def describe(self) -> Dict[str, Any]:
        return {'kind': type(self).__name__, 'd': self.d, 'index_bound': self.index_bound}

    def coverage_radius(self) -> float:
        """Every point outside the enumeration has at least this norm"""
        return math.inf

    def points_within(self, lo: np.ndarray, hi: np.ndarray, reach: float) -> np.ndarray:
        """Ranks of points whose reach-neighbourhood meets the box [lo, hi]"""
        lo = np.asarray(lo, dtype=float) - reach
        hi = np.asarray(hi, dtype=float) + reach
        corner = np.maximum(np.abs(lo), np.abs(hi))
        if np.linalg.norm(corner) >= self.coverage_radius():
            raise CertificationError(
                f"box reaching {np.linalg.norm(corner):.3g} exceeds the enumerated radius {self.coverage_radius():.3g}"
            )
        inside = np.all((self.points >= lo) & (self.points <= hi), axis=1)
        return np.nonzero(inside)[0]


class DefectPointSet(DefectGenerator):
    """
    Dyadic defect set: the point of index p has coordinates sign(p_i) 2^|p_i|,
    for every integer vector p obeying the membership rule with constant c0.
    Only indices with max-norm <= index_bound are enumerated; every query that
    could involve a point beyond the bound is rejected instead of truncated.
    """

    def __init__(self, d: int, c0: float = 2.0, index_bound: int = 16):
        if int(d) != d or d < 1:
            raise ConfigError(f"dimension must be a positive integer, got {d}")
        if not c0 > 1.0:
            raise ConfigError(f"c0 must be > 1, got {c0}")
        if int(index_bound) != index_bound or index_bound < 0:
            raise ConfigError(f"index_bound must be a nonnegative integer, got {index_bound}")
        if index_bound > 60:
            raise ConfigError(f"index_bound {index_bound} exceeds exact float range")

        self.d = int(d)
        self.c0 = float(c0)
        self.index_bound = int(index_bound)

        self._init_enumeration()
        self._tree = cKDTree(self._points)

    def _init_enumeration(self):
        """Enumerate members of the index set sorted by max-norm, then lexicographically"""
        bound = self.index_bound
        axes = [np.arange(-bound, bound + 1, dtype=np.int64)] * self.d
        candidates = np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1).reshape(-1, self.d)
        members = candidates[_membership_mask(candidates, self.c0)]

        max_norm = np.abs(members).max(axis=1)
        keys = [members[:, k] for k in range(self.d - 1, -1, -1)] + [max_norm]
        order = np.lexsort(keys)

        self._indices = members[order]
        self._indices.setflags(write=False)
        self._max_norm = max_norm[order]
        self._points = np.sign(self._indices) * np.exp2(np.abs(self._indices).astype(float))
        self._points.setflags(write=False)
        self._rank = {tuple(int(c) for c in row): r for r, row in enumerate(self._indices)}
        logger.debug(f"Enumerated {len(self._indices)} defect points (d={self.d}, bound={bound})")

    @property
    def indices(self) -> np.ndarray:
        return self._indices

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def max_norms(self) -> np.ndarray:
        return self._max_norm

    def describe(self) -> Dict[str, Any]:
        return {'kind': 'dyadic', 'd': self.d, 'c0': self.c0, 'index_bound': self.index_bound}

    def coverage_radius(self) -> float:
        return 2.0 ** (self.index_bound + 1)

    def rank_of(self, p: Sequence[int]) -> int:
        """Position of index p in the enumeration"""
        key = tuple(int(c) for c in p)
        if len(key) != self.d:
            raise ConfigError(f"index {key} has wrong length for d={self.d}")
        if not in_index_set(key, self.c0):
            raise ConfigError(f"index {key} is not in the index set for c0={self.c0}")
        if key not in self._rank:
            raise CertificationError(f"index {key} exceeds index_bound={self.index_bound}")
        return self._rank[key]

    def point_of(self, p: Sequence[int]) -> np.ndarray:
        """Coordinates sign(p_i) 2^|p_i| of the defect with index p"""
        key = tuple(int(c) for c in p)
        if len(key) != self.d:
            raise ConfigError(f"index {key} has wrong length for d={self.d}")
        if not in_index_set(key, self.c0):
            raise ConfigError(f"index {key} is not in the index set for c0={self.c0}")
        return np.array([math.copysign(2.0 ** abs(c), c) if c != 0 else 0.0 for c in key])

    def nearest_batch(self, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Rank of the nearest defect for every row of y, ties broken by the
        enumeration order. Raises CertificationError when a point beyond the
        enumeration bound could be closer.
        """
        y = np.asarray(y, dtype=float).reshape(-1, self.d)
        if y.shape[0] == 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0)

        k = min(len(self._points), 2 * self.d + 2)
        _, candidates = self._tree.query(y, k=k)
        candidates = np.asarray(candidates).reshape(y.shape[0], k)

        offsets = self._points[candidates] - y[:, None, :]
        squared = np.sum(offsets ** 2, axis=2)
        best = squared.min(axis=1)
        tied = np.where(squared == best[:, None], candidates, len(self._points))
        ranks = tied.min(axis=1)
        distances = np.sqrt(best)

        # every point beyond the bound has norm >= 2^(bound + 1)
        floor = 2.0 ** (self.index_bound + 1) - np.linalg.norm(y, axis=1)
        uncertified = distances > floor
        if np.any(uncertified):
            worst = y[np.argmax(uncertified)]
            raise CertificationError(
                f"index_bound={self.index_bound} cannot certify the nearest defect of {worst.tolist()}"
            )
        return ranks, distances

    def nearest_defect(self, y: Sequence[float]) -> Tuple[Tuple[int, ...], float]:
        """Index of the Voronoi cell containing y and the distance to its defect"""
        return self.nearest(y)

    def in_dilated_cell(self, p: Sequence[int], y: np.ndarray) -> np.ndarray:
        """Membership of y in the 3/2-homothety of the cell of p about its defect"""
        rank = self.rank_of(p)
        center = self._points[rank]
        y = np.asarray(y, dtype=float).reshape(-1, self.d)
        pulled_back = center + (2.0 / 3.0) * (y - center)
        ranks, _ = self.nearest_batch(pulled_back)
        return ranks == rank

    def neighbour_distances(self) -> np.ndarray:
        """Distance from each enumerated point to the closest other enumerated point"""
        distances, _ = self._tree.query(self._points, k=2)
        return distances[:, 1]

    def distance_to_others(self, y: np.ndarray, rank: int) -> np.ndarray:
        """Distance from each row of y to the closest enumerated point other than rank"""
        y = np.asarray(y, dtype=float).reshape(-1, self.d)
        distances, neighbours = self._tree.query(y, k=2)
        return np.where(neighbours[:, 0] == rank, distances[:, 1], distances[:, 0])

    def squared_norm_exact(self, rank: int) -> int:
        """|x_p|^2 in exact integer arithmetic"""
        return sum(4 ** abs(int(c)) for c in self._indices[rank] if c != 0)

    def count_in_annulus(self, n: int) -> int:
        """Number of defects with 2^n <= |x| < 2^(n+1)"""
        if int(n) != n or n < 0:
            raise ConfigError(f"annulus exponent must be a nonnegative integer, got {n}")
        if n > self.index_bound:
            raise CertificationError(f"annulus {n} needs index_bound >= {n}, have {self.index_bound}")
        low, high = 4 ** n, 4 ** (n + 1)
        candidates = np.nonzero(self._max_norm <= n)[0]
        return sum(1 for r in candidates if low <= self.squared_norm_exact(int(r)) < high)

    def cells_intersecting_ball(self, x0: Sequence[float], radius: float,
                                boundary_samples: int = 4096) -> List[Tuple[int, ...]]:
        """
        Indices of cells meeting the open ball B_radius(x0).
        Cells are convex and contain their defect, so a cell whose defect lies
        outside the ball meets it iff it meets the sphere; the sphere is sampled
        and the point of the sphere closest to each candidate defect is tested.
        """
        if not radius > 0:
            raise ConfigError(f"radius must be positive, got {radius}")
        x0 = np.asarray(x0, dtype=float).reshape(self.d)
        reach = 8.0 * max(radius, 1.0)
        candidates = set(self._tree.query_ball_point(x0, reach))

        distances = np.linalg.norm(self._points - x0, axis=1)
        found = set(np.nonzero(distances <= radius)[0].tolist())

        shell = radius * (1.0 - 1e-9)
        queries = [sphere_samples(x0, shell, boundary_samples), x0[None, :]]
        outside = [r for r in candidates if distances[r] > radius]
        if outside:
            directions = self._points[outside] - x0
            directions /= np.linalg.norm(directions, axis=1)[:, None]
            queries.append(x0 + shell * directions)
        ranks, _ = self.nearest_batch(np.vstack(queries))
        found.update(int(r) for r in ranks)

        stray = found - candidates
        if stray:
            logger.warning(f"{len(stray)} intersecting cells lie outside the exclusion radius {reach}")
        ordered = sorted(found)
        return [tuple(int(c) for c in self._indices[r]) for r in ordered]

    def cell_bounding_box(self, p: Sequence[int], samples: int = 512) -> Tuple[np.ndarray, np.ndarray, str]:
        """
        Box containing the cell of p, and how it was obtained:
        'exact' in d=1, 'inclusion' for off-axis indices in d=2, 'sampled' otherwise.
        """
        rank = self.rank_of(p)
        index = self._indices[rank]
        center = self._points[rank]

        if self.d == 1:
            return self._interval_cell(rank) + ('exact',)

        if self.d == 2 and np.all(index != 0):
            lo, hi = inclusion_box(index)
            return lo, hi, 'inclusion'

        return self._sampled_extent(rank, center, samples) + ('sampled',)

    def _interval_cell(self, rank: int) -> Tuple[np.ndarray, np.ndarray]:
        """Exact 1D cell: midpoints to the neighbouring defects"""
        x = self._points[rank, 0]
        line = np.sort(self._points[:, 0])
        position = np.searchsorted(line, x)
        if position == 0 or position == len(line) - 1:
            raise CertificationError(f"cell of x={x} reaches beyond index_bound={self.index_bound}")
        left = 0.5 * (line[position - 1] + x)
        right = 0.5 * (x + line[position + 1])
        return np.array([left]), np.array([right])

    def _sampled_extent(self, rank: int, center: np.ndarray, samples: int) -> Tuple[np.ndarray, np.ndarray]:
        """Extent of sampled cell points, certified by staying clear of the sampling window"""
        half_width = 2.0 ** (int(self._max_norm[rank]) + 1) + 1.0
        count = max(samples, 256) * 4 ** self.d
        for _ in range(4):
            lo, hi = center - half_width, center + half_width
            cloud = box_samples(lo, hi, count)
            ranks, _ = self.nearest_batch(cloud)
            mine = cloud[ranks == rank]
            spacing = 2.0 * half_width / count ** (1.0 / self.d)
            if len(mine) == 0:
                raise CertificationError(f"no sampled point fell in the cell of rank {rank}")
            cell_lo, cell_hi = mine.min(axis=0) - spacing, mine.max(axis=0) + spacing
            if np.all(cell_lo > lo) and np.all(cell_hi < hi):
                return cell_lo, cell_hi
            half_width *= 2.0
        raise ResolutionError(f"sampled extent of cell rank {rank} could not be certified")


class SingleDefectSet(DefectGenerator):
    """One defect at the origin; reference configuration for single-defect solves"""

    def __init__(self, d: int):
        if int(d) != d or d < 1:
            raise ConfigError(f"dimension must be a positive integer, got {d}")
        self.d = int(d)
        self.index_bound = 0
        self._indices = np.zeros((1, self.d), dtype=np.int64)
        self._points = np.zeros((1, self.d))

    @property
    def indices(self) -> np.ndarray:
        return self._indices

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def max_norms(self) -> np.ndarray:
        return np.zeros(1, dtype=np.int64)

    def describe(self) -> Dict[str, Any]:
        return {'kind': 'single', 'd': self.d}

    def point_of(self, p: Sequence[int]) -> np.ndarray:
        if len(p) != self.d or any(int(c) != 0 for c in p):
            raise ConfigError(f"the single defect set only holds the zero index, got {tuple(p)}")
        return self._points[0].copy()

    def nearest_batch(self, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        y = np.asarray(y, dtype=float).reshape(-1, self.d)
        return np.zeros(y.shape[0], dtype=np.int64), np.linalg.norm(y, axis=1)


def inclusion_box(index: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Box containing the 2D cell of an off-axis index:
    [2^(|p1|-1), 2^(|p|+1)] x [2^(|p2|-1), 2^(|p|+1)], reflected into the quadrant of p.
    """
    index = np.asarray(index, dtype=np.int64)
    if index.size != 2 or np.any(index == 0):
        raise ConfigError(f"inclusion box is defined for off-axis 2D indices, got {index.tolist()}")
    magnitudes = np.abs(index)
    top = 2.0 ** (magnitudes.max() + 1)
    near = np.exp2(magnitudes - 1.0)
    signs = np.sign(index)
    corner_a = signs * near
    corner_b = signs * top
    return np.minimum(corner_a, corner_b), np.maximum(corner_a, corner_b)


@dataclass
class GeometryCertificate:
    """Measured constants of the sparsity assumptions"""
    d: int
    c0: float
    index_bound: int
    h2_ratio_min: float
    h2_ratio_max: float
    h2_bound: float
    h3_ratio_max: float
    annulus_counts: List[int]
    annulus_count_max: int
    cell_count_fit: Dict[str, float]
    cell_counts: List[int]
    inclusion_violations: int
    inclusion_samples: int
    dilated_separation_min: float
    volume_bounds_ok: bool
    injective: bool
    norm_bounds_ok: bool

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def injectivity_check(point_set: DefectPointSet) -> bool:
    """No two enumerated indices share a point"""
    unique = np.unique(point_set.points, axis=0)
    return len(unique) == len(point_set.points)


def norm_bounds_check(point_set: DefectPointSet) -> bool:
    """2^|p| <= |x_p| <= sqrt(d) 2^|p|, checked on squared norms in integer arithmetic"""
    for rank, norm in enumerate(point_set.max_norms):
        squared = point_set.squared_norm_exact(rank)
        scale = 4 ** int(norm)
        if int(norm) == 0:
            if squared != 0:
                return False
            continue
        if not (scale <= squared <= point_set.d * scale):
            return False
    return True


def cell_count_fit(point_set: DefectPointSet, exponents: Sequence[int],
                   x0: Optional[Sequence[float]] = None,
                   boundary_samples: int = 4096) -> Dict[str, Any]:
    """Cells meeting B_R(x0) for R = 2^k, fitted against log2 R"""
    if x0 is None:
        x0 = np.zeros(point_set.d)
    counts = [len(point_set.cells_intersecting_ball(x0, 2.0 ** k, boundary_samples)) for k in exponents]
    fit = fit_line(list(exponents), counts)
    return {
        'exponents': list(int(k) for k in exponents),
        'counts': counts,
        'slope': fit['slope'],
        'intercept': fit['intercept'],
        'r2': fit['r2'],
    }


def enumerate_indices(point_set: DefectGenerator) -> Tuple[np.ndarray, np.ndarray]:
    """Indices ordered by max-norm then lexicographically, with their points"""
    return point_set.enumerate()


def _sampled_cells(work: DefectPointSet, members: np.ndarray, gaps: np.ndarray,
                   samples_per_cell: int, max_samples_per_cell: int):
    """
    Sample the window around each member cell and yield what the checks need:
    the bounding box, the sampled cell points and the volume estimate.
    """
    d = work.d
    unit_ball = math.pi ** (d / 2) / math.gamma(d / 2 + 1)
    for position, rank in enumerate(members):
        index = tuple(int(c) for c in work.indices[rank])
        lo, hi, how = work.cell_bounding_box(index, samples_per_cell)
        window_lo = lo - 0.25 * (hi - lo)
        window_hi = hi + 0.25 * (hi - lo)
        window_volume = float(np.prod(window_hi - window_lo))
        inner = unit_ball * (gaps[position] / 2.0) ** d
        draw = int(min(max_samples_per_cell, samples_per_cell * math.ceil(window_volume / inner)))
        cloud = box_samples(window_lo, window_hi, draw)
        ranks, _ = work.nearest_batch(cloud)
        mine = cloud[ranks == rank]
        yield {
            'index': index,
            'rank': int(rank),
            'gap': float(gaps[position]),
            'lo': lo,
            'hi': hi,
            'how': how,
            'points': mine,
            'diameter': float(np.linalg.norm(hi - lo)),
            'inner_volume': inner,
            'volume': window_volume * len(mine) / len(cloud),
        }


def _certification_members(point_set: DefectPointSet, index_bound: int,
                           extra: int = 0) -> Tuple[DefectPointSet, np.ndarray, np.ndarray]:
    """Working set with headroom, ranks with 1 <= |p| <= index_bound, and their neighbour gaps"""
    work = DefectPointSet(point_set.d, point_set.c0, max(index_bound, extra) + 4)
    members = np.nonzero((work.max_norms >= 1) & (work.max_norms <= index_bound))[0]
    gaps = work.neighbour_distances()[members]
    return work, members, gaps


def _dilated_ratio(work: DefectPointSet, cell: Dict[str, Any]) -> Optional[float]:
    """min over the 3/2-dilated cell samples of the distance to other defects, over |x_p|"""
    if len(cell['points']) == 0:
        return None
    center = work.points[cell['rank']]
    dilated = center + 1.5 * (cell['points'] - center)
    other = work.distance_to_others(dilated, cell['rank'])
    return float(other.min()) / float(np.linalg.norm(center))


def cell_volume_bounds(point_set: DefectPointSet, index_bound: int,
                       samples_per_cell: int = 64, max_samples_per_cell: int = 16384) -> pd.DataFrame:
    """
    Per index: volume of the ball of radius D/2 around the defect, sampled cell
    volume and Diam^d of the bounding box; within_bounds tests the sandwich
    with a factor 2 of sampling slack.
    """
    if index_bound < 1:
        raise ConfigError(f"index_bound must be >= 1, got {index_bound}")
    work, members, gaps = _certification_members(point_set, index_bound)
    rows = []
    for cell in _sampled_cells(work, members, gaps, samples_per_cell, max_samples_per_cell):
        upper = cell['diameter'] ** work.d
        rows.append({
            'index': ' '.join(str(c) for c in cell['index']),
            'inner_volume': cell['inner_volume'],
            'volume': cell['volume'],
            'diameter_power': upper,
            'within_bounds': bool(0.5 * cell['inner_volume'] <= cell['volume'] <= 2.0 * upper),
        })
    return pd.DataFrame(rows)


def dilated_separation(point_set: DefectPointSet, index_bound: int,
                       samples_per_cell: int = 64, max_samples_per_cell: int = 16384) -> float:
    """Measured constant c with |y - x_q| >= c |x_p| for sampled y in W_p and every q != p"""
    if index_bound < 1:
        raise ConfigError(f"index_bound must be >= 1, got {index_bound}")
    work, members, gaps = _certification_members(point_set, index_bound)
    ratios = [_dilated_ratio(work, cell)
              for cell in _sampled_cells(work, members, gaps, samples_per_cell, max_samples_per_cell)]
    ratios = [r for r in ratios if r is not None]
    return float(min(ratios)) if ratios else float('nan')


def certify_assumptions(point_set: DefectPointSet, index_bound: int,
                        samples_per_cell: int = 64, strict: bool = True,
                        fit_exponents: Optional[Sequence[int]] = None,
                        max_samples_per_cell: int = 16384) -> GeometryCertificate:
    """
    Measure the separation constant bounds, the cell-diameter ratio, the
    per-annulus counts and the log cell-count law for all indices with
    1 <= |p| <= index_bound; in d=2 every sampled cell point of an off-axis
    index is checked against its inclusion box.
    """
    if index_bound < 4:
        raise ConfigError(f"certification needs index_bound >= 4, got {index_bound}")
    if fit_exponents is None:
        fit_exponents = list(range(4, index_bound + 1))
    work, members, gaps = _certification_members(point_set, index_bound, max(fit_exponents))
    d = work.d

    norms = np.linalg.norm(work.points[members], axis=1)
    h2_ratios = (1.0 + norms) / gaps

    h3_ratios = []
    violations = 0
    inclusion_samples = 0
    separations = []
    volumes_ok = True

    for cell in _sampled_cells(work, members, gaps, samples_per_cell, max_samples_per_cell):
        h3_ratios.append(cell['diameter'] / cell['gap'])
        mine = cell['points']

        if cell['how'] == 'inclusion':
            inclusion_samples += len(mine)
            lo, hi = cell['lo'], cell['hi']
            tolerance = 1e-12 * float(np.max(np.abs(hi)))
            outside = np.any((mine < lo - tolerance) | (mine > hi + tolerance), axis=1)
            violations += int(outside.sum())

        if not (0.5 * cell['inner_volume'] <= cell['volume'] <= 2.0 * cell['diameter'] ** d):
            volumes_ok = False

        ratio = _dilated_ratio(work, cell)
        if ratio is not None:
            separations.append(ratio)

    if violations and strict:
        raise CertificationError(f"{violations} sampled cell points violate the inclusion box")

    annulus = [work.count_in_annulus(n) for n in range(index_bound + 1)]
    counts = cell_count_fit(work, fit_exponents)

    certificate = GeometryCertificate(
        d=d,
        c0=work.c0,
        index_bound=int(index_bound),
        h2_ratio_min=float(h2_ratios.min()),
        h2_ratio_max=float(h2_ratios.max()),
        h2_bound=(1.0 + math.sqrt(d)) * 2.0 ** (work.c0 + 1.0),
        h3_ratio_max=float(max(h3_ratios)),
        annulus_counts=annulus,
        annulus_count_max=int(max(annulus)),
        cell_count_fit={'slope': counts['slope'], 'intercept': counts['intercept'], 'r2': counts['r2']},
        cell_counts=counts['counts'],
        inclusion_violations=violations,
        inclusion_samples=inclusion_samples,
        dilated_separation_min=float(min(separations)) if separations else float('nan'),
        volume_bounds_ok=volumes_ok,
        injective=injectivity_check(work),
        norm_bounds_ok=norm_bounds_check(work),
    )
    logger.info(f"Geometry certificate: d={d}, c0={work.c0}, bound={index_bound}, "
                f"h2 in [{certificate.h2_ratio_min:.3f}, {certificate.h2_ratio_max:.3f}], "
                f"violations={violations}")
    return certificate


def exhaustion_check(point_set: DefectPointSet, axis: int, n_max: int, n_min: int = 1,
                     samples: int = 256) -> Dict[str, Any]:
    """
    Along the axis sequence p_n = n e_axis, check that each recentred cell
    contains the ball of radius c 2^n, that these balls grow, and from which
    n on they contain the box [-3, 3]^d.
    """
    if n_max < 2:
        raise ConfigError(f"n_max must be >= 2, got {n_max}")
    if not 0 <= axis < point_set.d:
        raise ConfigError(f"axis {axis} out of range for d={point_set.d}")
    work = DefectPointSet(point_set.d, point_set.c0, max(point_set.index_bound, n_max + 2))
    d = work.d
    gaps = work.neighbour_distances()

    ranks = []
    ratios = []
    for n in range(n_min, n_max + 1):
        index = [0] * d
        index[axis] = n
        rank = work.rank_of(index)
        ranks.append(rank)
        ratios.append(gaps[rank] / (2.0 * np.linalg.norm(work.points[rank])))
    c = float(min(ratios))

    radii = []
    contained = []
    box_from = None
    corners = 3.0 * (2.0 * np.array(np.meshgrid(*[[0, 1]] * d, indexing='ij')).reshape(d, -1).T - 1.0)
    for n, rank in zip(range(n_min, n_max + 1), ranks):
        center = work.points[rank]
        radius = c * 2.0 ** n
        radii.append(radius)
        queries = np.vstack([ball_samples(center, radius, samples),
                             sphere_samples(center, radius * (1.0 - 1e-9), samples)])
        found, _ = work.nearest_batch(queries)
        contained.append(bool(np.all(found == rank)))

        corner_ranks, _ = work.nearest_batch(center + corners)
        if box_from is None and radius >= 3.0 * math.sqrt(d) and np.all(corner_ranks == rank):
            box_from = n

    nested = all(b > a for a, b in zip(radii, radii[1:]))
    return {
        'passed': bool(all(contained) and nested and box_from is not None),
        'c': c,
        'radii': radii,
        'contained': contained,
        'nested': nested,
        'box_from': box_from,
    }
