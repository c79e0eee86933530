"""
One-Dimensional Oracle
Closed-form solution of -(a(x/eps) u')' = f on (0, 1) with u(0) = u(1) = 0,
its homogenized limit, the corrector w = w_per + w~ and the first-order
remainder, all evaluated by composite Simpson quadrature
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Any, Optional, Callable, Sequence

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_simpson, simpson

from coefficient_builder import DefectProfile, PerturbedCoefficient, PeriodicCoefficient
from defect_geometry import DefectPointSet
from lab_errors import ConfigError, ResolutionError
from rate_fitting import expected_exponents, fit_line, fit_loglog
import logging

logger = logging.getLogger(__name__)


def _unit_source(x: np.ndarray) -> np.ndarray:
    return np.ones_like(x)


@dataclass
class Oracle1DConfig:
    periodic: PeriodicCoefficient
    profile: Optional[DefectProfile] = None
    source: Callable[[np.ndarray], np.ndarray] = _unit_source
    samples_per_period: int = 32
    index_bound: int = 40
    modulation: float = 0.0
    max_nodes: int = 4_000_001

    def __post_init__(self):
        if self.periodic.d != 1:
            raise ConfigError(f"the 1D oracle needs a 1D periodic coefficient, got d={self.periodic.d}")
        if self.profile is not None and self.profile.d != 1:
            raise ConfigError("the 1D oracle needs a 1D defect profile")
        self.point_set = DefectPointSet(1, c0=2.0, index_bound=self.index_bound)
        self.coefficient = PerturbedCoefficient(self.periodic, self.profile,
                                                self.point_set if self.profile is not None else None,
                                                modulation=self.modulation)

    @property
    def feature_scale(self) -> float:
        """Smallest length the quadrature must resolve at eps = 1"""
        if self.profile is None:
            return 1.0
        return min(1.0, self.profile.rho)

    def harmonic_mean(self, samples: int = 8192) -> float:
        """a* = (int_0^1 1/a_per)^-1"""
        y = np.linspace(0.0, 1.0, samples + 1)
        return 1.0 / float(simpson(1.0 / self.periodic.diagonal(y)[:, 0], x=y))


@dataclass
class Oracle1DSolution:
    """Oracle fields on the quadrature nodes x of (0, 1)"""
    eps: float
    x: np.ndarray
    a_star: float
    c_eps: float
    c_star: float
    coefficient: np.ndarray
    F: np.ndarray
    du_eps: np.ndarray
    u_eps: np.ndarray
    du_star: np.ndarray
    u_star: np.ndarray
    w_per: np.ndarray
    w_tilde: np.ndarray
    dR: np.ndarray
    R: np.ndarray
    dR_per: np.ndarray
    R_per: np.ndarray
    extras: Dict[str, Any] = field(default_factory=dict)

    @property
    def w(self) -> np.ndarray:
        """w(x / eps) at the nodes"""
        return self.w_per + self.w_tilde

    def handle(self, name: str) -> Callable[[np.ndarray], np.ndarray]:
        """Piecewise-linear function handle on a stored node array"""
        values = getattr(self, name)
        return lambda points: np.interp(np.asarray(points, dtype=float), self.x, values)

    def flux_identity_residual(self) -> float:
        """max |a(x/eps) u_eps' - (C_eps - F)|, zero up to rounding by construction"""
        return float(np.abs(self.coefficient * self.du_eps - (self.c_eps - self.F)).max())

    def norm(self, name: str) -> float:
        return math.sqrt(float(simpson(getattr(self, name) ** 2, x=self.x)))


def _nodes(config: Oracle1DConfig, eps: float) -> np.ndarray:
    spacing = eps * config.feature_scale / config.samples_per_period
    intervals = int(math.ceil(1.0 / spacing))
    intervals += intervals % 2
    if intervals + 1 > config.max_nodes:
        raise ResolutionError(f"eps={eps:g} needs {intervals + 1} quadrature nodes, limit is {config.max_nodes}")
    return np.linspace(0.0, 1.0, intervals + 1)


def exact_fields(config: Oracle1DConfig, eps: float) -> Oracle1DSolution:
    """
    u_eps' = (C_eps - F) / a(x/eps), u*' = (C* - F) / a*, with F = int_0^x f,
    C_eps = int F/a / int 1/a and C* = int F, so that u(0) = u(1) = 0.
    w_per(y) = -y + a* int_0^y 1/a_per, w~(y) = -a* int_0^y a~ / (a_per (a_per + a~)).
    """
    if not 0.0 < eps <= 1.0:
        raise ConfigError(f"eps must lie in (0, 1], got {eps}")
    if config.samples_per_period < 32:
        raise ResolutionError(f"{config.samples_per_period} samples per period cannot resolve the oscillation; need >= 32")

    x = _nodes(config, eps)
    y = x / eps
    a_per = config.periodic.diagonal(y)[:, 0]
    coef = config.coefficient
    a_tilde = coef.defect_diagonal(y)[:, 0] if coef.has_defects else np.zeros_like(y)
    a = a_per + a_tilde
    if a.min() <= 0.0:
        raise ConfigError(f"coefficient is not elliptic on the quadrature nodes (min {a.min():.3e})")

    f = np.asarray(config.source(x), dtype=float)
    F = cumulative_simpson(f, x=x, initial=0.0)
    inverse = 1.0 / a
    c_eps = float(simpson(inverse * F, x=x) / simpson(inverse, x=x))
    c_star = float(simpson(F, x=x))
    a_star = config.harmonic_mean()

    du_eps = inverse * (c_eps - F)
    u_eps = cumulative_simpson(du_eps, x=x, initial=0.0)
    du_star = (c_star - F) / a_star
    u_star = cumulative_simpson(du_star, x=x, initial=0.0)
    d2u_star = -f / a_star

    # int_0^{x/eps} g(y) dy = (1/eps) int_0^x g(s/eps) ds
    w_per = -y + a_star * cumulative_simpson(1.0 / a_per, x=x, initial=0.0) / eps
    w_tilde = -a_star * cumulative_simpson(a_tilde / (a_per * a), x=x, initial=0.0) / eps

    dR = (c_eps - c_star) * inverse - eps * (w_per + w_tilde) * d2u_star
    R = cumulative_simpson(dR, x=x, initial=0.0)
    dR_per = du_eps - du_star * a_star / a_per - eps * w_per * d2u_star
    R_per = cumulative_simpson(dR_per, x=x, initial=0.0)

    logger.debug(f"1D oracle eps={eps:g}: {x.size} nodes, C_eps={c_eps:.6f}, C*={c_star:.6f}")
    return Oracle1DSolution(eps, x, a_star, c_eps, c_star, a, F, du_eps, u_eps, du_star, u_star,
                            w_per, w_tilde, dR, R, dR_per, R_per)


def rate_study_1d(config: Oracle1DConfig, eps_list: Sequence[float], workers: int = 1) -> Dict[str, Any]:
    """
    Remainder norms per eps with the ratio ||R'|| / (eps^1/2 |log eps|^1/2),
    the periodic-only remainder alongside, and log-log fits
    """
    eps_list = sorted((float(e) for e in eps_list), reverse=True)
    if len(eps_list) < 2:
        raise ConfigError("a rate study needs at least two eps values")

    def job(eps):
        solution = exact_fields(config, eps)
        bound = math.sqrt(eps * abs(math.log(eps))) if eps < 1.0 else float('nan')
        h1 = solution.norm('dR')
        return {
            'epsilon': eps,
            'l2_R': solution.norm('R'),
            'h1_R': h1,
            'ratio_vs_bound': h1 / bound,
            'l2_R_per': solution.norm('R_per'),
            'h1_R_per': solution.norm('dR_per'),
        }

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(job, eps_list))
    else:
        rows = [job(eps) for eps in eps_list]

    table = pd.DataFrame(rows, columns=['epsilon', 'l2_R', 'h1_R', 'ratio_vs_bound', 'l2_R_per', 'h1_R_per'])
    report = {'table': table, 'l2_fit': None, 'h1_fit': None}
    if (table['l2_R'] > 0).sum() >= 2:
        report['l2_fit'] = fit_loglog(table['epsilon'], table['l2_R'])
    if (table['h1_R'] > 0).sum() >= 2:
        report['h1_fit'] = fit_loglog(table['epsilon'], table['h1_R'])
    ratios = table['ratio_vs_bound'][table['ratio_vs_bound'] > 0]
    report['ratio_band'] = float(ratios.max() / ratios.min()) if len(ratios) else float('nan')
    report['ratio_max'] = float(ratios.max()) if len(ratios) else 0.0
    logger.info(f"1D rate study over {len(table)} eps values: ratio band {report['ratio_band']:.3f}")
    return report


def _merged_supports(centers: np.ndarray, reach: float, lo: float, hi: float) -> List[List[float]]:
    intervals = []
    for center in np.sort(centers):
        start, stop = max(lo, center - reach), min(hi, center + reach)
        if stop <= start:
            continue
        if intervals and start <= intervals[-1][1]:
            intervals[-1][1] = max(intervals[-1][1], stop)
        else:
            intervals.append([start, stop])
    return intervals


def corrector_growth_1d(config: Oracle1DConfig, n_max: int, samples_per_unit: int = 64) -> Dict[str, Any]:
    """
    sup over [0, 2^n] of |w~| for n = 0..n_max, integrating only over the
    defect supports, with an affine fit in n
    """
    if not 0 <= n_max <= 24:
        raise ConfigError(f"n_max must lie in [0, 24], got {n_max}")
    a_star = config.harmonic_mean()
    sups = np.zeros(n_max + 1)
    coef = config.coefficient

    if coef.has_defects:
        if config.index_bound < n_max + 2:
            raise ConfigError(f"index_bound {config.index_bound} is too small for n_max={n_max}")
        reach = config.profile.reach
        spacing = config.feature_scale / samples_per_unit
        top = 2.0 ** n_max
        centers = config.point_set.points[np.abs(config.point_set.points[:, 0]) <= top + reach][:, 0]
        running, peak = 0.0, 0.0
        checkpoints = []
        for start, stop in _merged_supports(centers, reach, 0.0, top):
            count = int(math.ceil((stop - start) / spacing))
            count += count % 2
            y = np.linspace(start, stop, count + 1)
            a_per = config.periodic.diagonal(y)[:, 0]
            a_tilde = coef.defect_diagonal(y)[:, 0]
            integrand = a_tilde / (a_per * (a_per + a_tilde))
            cumulative = running - a_star * cumulative_simpson(integrand, x=y, initial=0.0)
            checkpoints.append((y, np.maximum.accumulate(np.maximum(np.abs(cumulative), peak))))
            running = float(cumulative[-1])
            peak = float(checkpoints[-1][1][-1])
        for n in range(n_max + 1):
            limit = 2.0 ** n
            best = 0.0
            for y, envelope in checkpoints:
                inside = y <= limit
                if np.any(inside):
                    best = max(best, float(envelope[inside][-1]))
            sups[n] = best

    table = pd.DataFrame({'n': np.arange(n_max + 1), 'sup_abs_w_tilde': sups})
    fit = fit_line(table['n'], table['sup_abs_w_tilde']) if n_max >= 1 else None
    return {'table': table, 'fit': fit, 'increment': generation_increment(config) if coef.has_defects else 0.0}


def generation_increment(config: Oracle1DConfig, samples_per_unit: int = 256) -> float:
    """a* int a~ / (a_per (a_per + a~)) over one unmodulated defect placed at an integer point"""
    if config.profile is None:
        return 0.0
    reach = config.profile.reach
    count = int(math.ceil(2 * reach * samples_per_unit / config.feature_scale))
    count += count % 2
    z = np.linspace(-reach, reach, count + 1)
    a_per = config.periodic.diagonal(z)[:, 0]
    bump = config.profile.evaluate(z[:, None])[:, 0, 0]
    return config.harmonic_mean() * float(simpson(bump / (a_per * (a_per + bump)), x=z))


def exponent_hook_1d(periodic: PeriodicCoefficient, betas: Sequence[float], eps_list: Sequence[float],
                     r: float = 2.0, rho: float = 0.5, r_cut: float = 1024.0,
                     amplitude: float = 1.0, samples_per_period: int = 32) -> Dict[str, Any]:
    """
    Remainder slopes for algebraic profiles at several decay exponents beta;
    passes when the slopes are ordered like the membership beta r > d predicts
    """
    rows = []
    for beta in betas:
        profile = DefectProfile(1, 'algebraic', amplitude, rho=rho, beta=beta, r_cut=r_cut)
        config = Oracle1DConfig(periodic, profile, samples_per_period=samples_per_period)
        study = rate_study_1d(config, eps_list)
        rows.append({'beta': float(beta), 'in_lr': profile.lr_membership(r),
                     'l2_slope': study['l2_fit']['slope'], 'h1_slope': study['h1_fit']['slope']})
    table = pd.DataFrame(rows).sort_values('beta').reset_index(drop=True)
    exponents = expected_exponents(1, r)
    ordered = bool(np.all(np.diff(table['h1_slope'].to_numpy()) >= 0.0))
    return {'table': table, 'ordered': ordered, 'nu_r': exponents['nu_r'], 'mu_r': exponents['mu_r']}
