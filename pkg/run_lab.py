"""
Homogenization Lab Runner
Command-line entry point: validates an experiment config, runs the named
pipeline, writes CSV/JSON/field/plot artifacts with a hashed manifest and
logs every run in the sqlite run store
"""

import argparse
import hashlib
import json
import logging
import math
import sys
from pathlib import Path
from typing import Dict, List, Any, Optional

import numpy as np
import pandas as pd

from coefficient_builder import (
    PerturbedCoefficient, cell_norm_table, coefficient_average_decay, ellipticity_floor,
    holder_quotient, tail_uniform,
)
from corrector_solver import (
    build_M, corrector_diagnostics, energy_tensor, gradient_cell_table, homogenized_tensor,
    perturbed_matrix, solve_periodic_correctors, solve_perturbed_corrector, solve_perturbed_potential,
    solve_potential, truncation_agreement,
)
from database import DatabaseManager
from defect_geometry import SingleDefectSet, cell_volume_bounds, certify_assumptions, exhaustion_check
from divform_solver import PERIODIC, GridField, UniformGrid, write_field
from experiment_config import ExperimentConfig, PRESETS, load_config_file, resolve_workers
from lab_errors import ConfigError, LabError, NumericalError
from multiscale_pipeline import MultiscaleProblem, flux_average_tensor, remainder_study
from oracle_1d import Oracle1DConfig, corrector_growth_1d, exponent_hook_1d, rate_study_1d
from plot_export import write_loglog_html, write_table_dats
from rate_fitting import expected_exponents

logger = logging.getLogger(__name__)

DB_NAME = 'homlab_runs.db'
MANIFEST_NAME = 'manifest.json'
VOLUME_TABLE_BOUND = 8
EXIT_OK = 0


def _plain(value: Any) -> Any:
    """JSON-ready copy with numpy types unwrapped, floats at 12 significant digits and NaN as null"""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, pd.DataFrame):
        return _plain(value.to_dict(orient='records'))
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            return None
        return float(f"{value:.12g}")
    return value


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as handle:
        for block in iter(lambda: handle.read(1 << 20), b''):
            digest.update(block)
    return digest.hexdigest()


class ArtifactWriter:
    """Writes every output under one directory and keeps the list for the manifest"""

    def __init__(self, out_dir: Path, config_hash: str, plot: bool = False):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.config_hash = config_hash
        self.plot = plot
        self.files: List[Path] = []

    def _track(self, path: Optional[Path]) -> Optional[Path]:
        if path is not None:
            self.files.append(Path(path))
        return path

    def csv(self, name: str, table: pd.DataFrame) -> Path:
        path = self.out_dir / name
        with open(path, 'w', encoding='utf-8', newline='') as handle:
            handle.write(f"# config_hash: {self.config_hash}\n")
            table.to_csv(handle, index=False, float_format='%.12g')
        return self._track(path)

    def json(self, name: str, payload: Dict[str, Any]) -> Path:
        path = self.out_dir / name
        document = dict(payload, config_hash=self.config_hash)
        path.write_text(json.dumps(_plain(document), indent=2, sort_keys=True) + '\n', encoding='utf-8')
        return self._track(path)

    def field(self, name: str, field: GridField) -> Path:
        return self._track(write_field(self.out_dir / name, field))

    def series(self, table: pd.DataFrame, x_column: str, y_columns: List[str], stem: str, title: str):
        """Two-column .dat files and, with plotting on, one log-log HTML page"""
        for path in write_table_dats(table, x_column, y_columns, self.out_dir, stem):
            self._track(path)
        if self.plot:
            self._track(write_loglog_html(table, x_column, y_columns, self.out_dir / f"{stem}.html", title))

    def manifest(self) -> Path:
        """Sorted relative paths with sha256; the run store and the manifest itself are not listed"""
        entries = sorted(
            ({'path': p.relative_to(self.out_dir).as_posix(), 'sha256': sha256_file(p)} for p in set(self.files)),
            key=lambda e: e['path'],
        )
        path = self.out_dir / MANIFEST_NAME
        path.write_text(json.dumps({'files': entries}, indent=2, sort_keys=True) + '\n', encoding='utf-8')
        return path

    def entries(self) -> List[Dict[str, str]]:
        return [{'path': p.relative_to(self.out_dir).as_posix(), 'sha256': sha256_file(p)}
                for p in sorted(set(self.files))]


def _require_defects(coef: PerturbedCoefficient, command: str):
    if not coef.has_defects:
        raise ConfigError(f"{command} needs a defect profile in coefficient.profile")


def _cell_grid(config: ExperimentConfig) -> UniformGrid:
    return UniformGrid(config.d, config.section('corrector')['cells_per_unit'], 0.0, 1.0, PERIODIC)


def cmd_geometry_certify(config: ExperimentConfig, writer: ArtifactWriter, workers: int) -> Dict[str, Any]:
    spec = config.section('geometry')
    point_set = config.point_set(spec['index_bound'])
    certificate = certify_assumptions(point_set, spec['index_bound'], spec['samples_per_cell'],
                                      spec['strict'], spec['fit_exponents'])
    exhaustion = exhaustion_check(point_set, 0, spec['exhaustion_n_max'])

    payload = certificate.to_dict()
    payload['exhaustion'] = exhaustion
    writer.json('certificate.json', payload)
    counts = pd.DataFrame({'log2_R': spec['fit_exponents'], 'cells': certificate.cell_counts})
    writer.csv('cell_counts.csv', counts)
    writer.series(counts, 'log2_R', ['cells'], 'cell_counts', 'Cells meeting B_R')
    writer.csv('annulus_counts.csv', pd.DataFrame({'generation': range(len(certificate.annulus_counts)),
                                                   'count': certificate.annulus_counts}))
    writer.csv('cell_volumes.csv', cell_volume_bounds(point_set, min(spec['index_bound'], VOLUME_TABLE_BOUND),
                                                      spec['samples_per_cell']))
    return {
        'h2_ratio_min': certificate.h2_ratio_min,
        'h2_ratio_max': certificate.h2_ratio_max,
        'h3_ratio_max': certificate.h3_ratio_max,
        'cell_count_slope': certificate.cell_count_fit['slope'],
        'inclusion_violations': certificate.inclusion_violations,
        'exhaustion_passed': exhaustion['passed'],
    }


def cmd_defect_profile(config: ExperimentConfig, writer: ArtifactWriter, workers: int) -> Dict[str, Any]:
    spec = config.section('profile_study')
    coef = config.coefficient()
    _require_defects(coef, 'defect-profile')
    floor = ellipticity_floor(coef)

    point_set = coef.point_set
    generation = np.nonzero(point_set.max_norms <= spec['cell_generations'])[0]
    indices = [tuple(int(c) for c in point_set.indices[rank]) for rank in generation]
    cells = cell_norm_table(coef, indices, spec['r_values'], spec['resolution'])
    writer.csv('cell_norms.csv', cells)

    radii = [2.0 ** k for k in spec['radii_exponents']]
    decay = coefficient_average_decay(coef, np.zeros(config.d), radii, spec['resolution'])
    writer.csv('average_decay.csv', decay['table'])
    writer.series(decay['table'], 'R', ['mean'], 'average_decay', 'Ball average of the defect part')

    tails = pd.DataFrame({'R': spec['tail_radii'],
                          'tail': [tail_uniform(coef, R, spec['tail_index_bound'], spec['resolution'])
                                   for R in spec['tail_radii']]})
    writer.csv('tail_uniform.csv', tails)

    summary = {
        'coefficient': coef.describe(),
        'coefficient_hash': coef.coefficient_hash(),
        'ellipticity_floor': floor,
        'lr_membership': {str(r): coef.profile.lr_membership(r) for r in spec['r_values']},
        'decay_slope': decay['slope'],
        'decay_r2': decay['r2'],
        'decay_ratio_band': decay['ratio_band'],
        'decay_bound_constant': decay['bound_constant'],
        'holder_quotient_half': holder_quotient(coef, 0.5),
    }
    writer.json('profile_summary.json', summary)
    return {'ellipticity_floor': floor, 'decay_slope': decay['slope'],
            'decay_bound_constant': decay['bound_constant'], 'tail_max': float(tails['tail'].max())}


def cmd_corrector(config: ExperimentConfig, writer: ArtifactWriter, workers: int) -> Dict[str, Any]:
    spec = config.section('corrector')
    coef = config.coefficient()
    solver = config.solver()
    correctors = solve_periodic_correctors(coef.periodic, _cell_grid(config), solver, workers)
    a_star = homogenized_tensor(correctors)
    for j, field in enumerate(correctors.fields):
        writer.field(f"w_per_{j}.hmf", field)

    summary = {
        'cell_grid': correctors.grid.describe(),
        'coefficient_hash': coef.coefficient_hash(),
        'a_star': a_star,
        'a_star_energy': energy_tensor(correctors),
        'periodic_residuals': [r.residual for r in correctors.results],
    }
    metrics = {f"a_star_{k + 1}{j + 1}": a_star[k, j] for k in range(config.d) for j in range(config.d)}

    if coef.has_defects:
        j = spec['direction']
        if j >= config.d:
            raise ConfigError(f"direction {j} out of range for d={config.d}")
        perturbed = solve_perturbed_corrector(coef, correctors, j, spec['box_half_width'], solver,
                                              spec['truncation_check'])
        writer.field(f"w_tilde_{j}.hmf", perturbed.field)
        diagnostics = corrector_diagnostics(correctors, perturbed)
        writer.csv('sublinearity.csv', diagnostics['sublinearity'])
        writer.csv('sup_growth.csv', diagnostics['sup_growth'])

        reference_coef = PerturbedCoefficient(coef.periodic, coef.profile, SingleDefectSet(config.d))
        reference = solve_perturbed_corrector(reference_coef, correctors, j, spec['reference_half_width'],
                                              solver, truncation_check=False)
        point_set = coef.point_set
        wanted = [tuple(int(c) for c in point_set.indices[rank])
                  for rank in np.nonzero(point_set.max_norms <= spec['generations'])[0]
                  if np.all(np.abs(point_set.points[rank]) < spec['box_half_width'])]
        cells = gradient_cell_table(perturbed, point_set, reference, wanted)
        writer.csv('cell_gradients.csv', cells)

        summary.update({
            'box_grid': perturbed.grid.describe(),
            'direction': j,
            'perturbed_residual': perturbed.result.residual,
            'truncation_error': perturbed.truncation_error,
            'uncovered_defects': [list(p) for p in perturbed.uncovered],
            'sublinearity_max_ratio': diagnostics['max_ratio'],
            'growth_fit': diagnostics['growth_fit'],
        })
        if perturbed.truncation_error is not None:
            metrics['truncation_error'] = perturbed.truncation_error
            agreement = truncation_agreement(coef, correctors, j, spec['box_half_width'], solver, perturbed)
            summary['truncation_agreement'] = agreement
            metrics['truncation_bc_difference'] = agreement['difference']
    writer.json('corrector.json', summary)
    return metrics


def cmd_potential(config: ExperimentConfig, writer: ArtifactWriter, workers: int) -> Dict[str, Any]:
    if config.d < 2:
        raise ConfigError("the flux potential needs d >= 2")
    spec = config.section('corrector')
    coef = config.coefficient()
    solver = config.solver()
    correctors = solve_periodic_correctors(coef.periodic, _cell_grid(config), solver, workers)
    a_star = homogenized_tensor(correctors)
    M = build_M(correctors, a_star)
    potential = solve_potential(M)
    for (k, i, j), values in sorted(potential.pairs.items()):
        writer.field(f"B_{k}_{i}{j}.hmf", GridField(correctors.grid, values, f"B_{k}_{i}{j}"))

    summary = {
        'a_star': a_star,
        'M_divergence_residual': M.divergence_residual,
        'M_cell_average': M.cell_average,
        'potential_residual': potential.divergence_residual,
        'potential_curl_residual': potential.curl_residual,
    }
    if coef.has_defects:
        perturbed = [solve_perturbed_corrector(coef, correctors, j, spec['box_half_width'], solver,
                                               truncation_check=False) for j in range(config.d)]
        fields, residual = solve_perturbed_potential(perturbed_matrix(correctors, perturbed), perturbed[0].grid)
        potential.perturbed, potential.perturbed_residual = fields, residual
        for (k, i, j), field in sorted(fields.items()):
            writer.field(f"B_tilde_{k}_{i}{j}.hmf", field)
        summary['perturbed_potential_residual'] = residual
    writer.json('potential.json', summary)
    return {'M_divergence_residual': M.divergence_residual, 'potential_residual': potential.divergence_residual,
            'potential_curl_residual': potential.curl_residual,
            'perturbed_potential_residual': potential.perturbed_residual}


def cmd_homogenize(config: ExperimentConfig, writer: ArtifactWriter, workers: int) -> Dict[str, Any]:
    coef = config.coefficient()
    solver = config.solver()
    correctors = solve_periodic_correctors(coef.periodic, _cell_grid(config), solver, workers)
    a_star = homogenized_tensor(correctors)
    summary = {'a_star': a_star, 'a_star_energy': energy_tensor(correctors),
               'coefficient_hash': coef.coefficient_hash()}
    metrics = {f"a_star_{k + 1}{j + 1}": a_star[k, j] for k in range(config.d) for j in range(config.d)}
    if coef.has_defects and config.section('rates')['flux_radii']:
        table = flux_average_tensor(coef, correctors, config.section('rates')['flux_radii'], solver)
        writer.csv('flux_average.csv', table)
        writer.series(table, 'R', ['gap'], 'flux_average', 'Flux-average gap to a*')
        metrics['flux_gap_last'] = float(table['gap'].iloc[-1])
    writer.json('homogenized.json', summary)
    return metrics


def cmd_rates_1d(config: ExperimentConfig, writer: ArtifactWriter, workers: int) -> Dict[str, Any]:
    spec = config.section('rates_1d')
    oracle = Oracle1DConfig(config.periodic(), config.profile(), config.source(), spec['samples_per_period'],
                            config.section('coefficient')['index_bound'],
                            modulation=config.section('coefficient')['modulation'])
    eps_list = config.eps_list_1d()
    study = rate_study_1d(oracle, eps_list, workers)
    writer.csv('rates_1d.csv', study['table'])
    writer.series(study['table'], 'epsilon', ['l2_R', 'h1_R', 'l2_R_per', 'h1_R_per'], 'rates_1d',
                  'One-dimensional remainder norms')

    growth = corrector_growth_1d(oracle, spec['growth_n_max'])
    writer.csv('growth_1d.csv', growth['table'])

    summary = {
        'a_star': oracle.harmonic_mean(),
        'coefficient_hash': oracle.coefficient.coefficient_hash(),
        'l2_fit': study['l2_fit'],
        'h1_fit': study['h1_fit'],
        'ratio_band': study['ratio_band'],
        'ratio_max': study['ratio_max'],
        'growth_fit': growth['fit'],
        'generation_increment': growth['increment'],
        'expected': expected_exponents(1, 2.0),
    }
    profile = config.profile()
    if profile is not None and profile.kind == 'algebraic' and spec['hook_betas']:
        hook = exponent_hook_1d(oracle.periodic, spec['hook_betas'], eps_list, rho=profile.rho,
                                r_cut=profile.r_cut, samples_per_period=spec['samples_per_period'])
        writer.csv('exponent_hook_1d.csv', hook['table'])
        summary['exponent_hook_ordered'] = hook['ordered']
    writer.json('rates_1d.json', summary)
    return {'l2_slope': study['l2_fit']['slope'], 'h1_slope': study['h1_fit']['slope'],
            'ratio_max': study['ratio_max']}


def cmd_rates(config: ExperimentConfig, writer: ArtifactWriter, workers: int) -> Dict[str, Any]:
    spec = config.section('rates')
    problem = MultiscaleProblem(
        config.coefficient(), config.eps_list(), source=config.source(),
        interior=tuple(spec['interior']), nodes_per_period=spec['nodes_per_period'],
        solver=config.solver(), include_perturbed=spec['include_perturbed'],
        check_refinement=spec['check_refinement'], workers=workers,
    )
    report = remainder_study(problem)
    writer.csv('rates.csv', report.rows)
    writer.series(report.rows, 'epsilon', ['l2_R', 'h1_R_interior', 'h1_R_global', 'H_norm'], 'rates',
                  'Remainder norms of the two-scale expansion')
    summary = report.to_dict()
    summary.pop('rows')
    writer.json('rates.json', summary)
    return {f"{name}_slope": fit['slope'] for name, fit in report.fits.items()}


COMMAND_HANDLERS = {
    'geometry-certify': cmd_geometry_certify,
    'defect-profile': cmd_defect_profile,
    'corrector': cmd_corrector,
    'potential': cmd_potential,
    'homogenize': cmd_homogenize,
    'rates-1d': cmd_rates_1d,
    'rates': cmd_rates,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Homogenization lab: periodic structures with sparse defects")
    sub = parser.add_subparsers(dest='command', required=True)

    for name in COMMAND_HANDLERS:
        p = sub.add_parser(name, help=f"run the {name} pipeline")
        p.add_argument('--config', type=str, default=None, help="JSON or TOML experiment config")
        p.add_argument('--preset', type=str, default=None, choices=sorted(PRESETS))
        p.add_argument('--out', type=str, default=None, help="output directory")
        p.add_argument('--workers', type=int, default=None)
        p.add_argument('--plot', action='store_true', help="also write plotly HTML pages")
        p.add_argument('--verbose', action='store_true')
        p.add_argument('--dim', type=int, default=None)
        if name == 'geometry-certify':
            p.add_argument('--c0', type=float, default=None)
            p.add_argument('--index-bound', type=int, default=None)
            p.add_argument('--seedless', action='store_true', help="accepted for compatibility; sampling is deterministic")
        if name == 'corrector':
            p.add_argument('--direction', type=int, default=None)
            p.add_argument('--box-l', type=float, default=None)
            p.add_argument('--generations', type=int, default=None)
        if name == 'rates-1d':
            p.add_argument('--eps-min-exp', type=int, default=None)
            p.add_argument('--eps-max-exp', type=int, default=None)
    return parser


def _set(raw: Dict[str, Any], section: Optional[str], key: str, value: Any):
    if value is None:
        return
    if section is None:
        raw[key] = value
    else:
        raw.setdefault(section, {})[key] = value


def raw_config_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    """Config file contents with the command-line flags laid over them"""
    raw = load_config_file(args.config) if args.config else {}
    raw.setdefault('schema_version', 1)
    raw['command'] = args.command
    _set(raw, None, 'preset', args.preset)
    _set(raw, None, 'output_dir', args.out)
    _set(raw, None, 'd', args.dim)
    if args.plot:
        raw['plot'] = True
    _set(raw, 'geometry', 'c0', getattr(args, 'c0', None))
    _set(raw, 'geometry', 'index_bound', getattr(args, 'index_bound', None))
    _set(raw, 'corrector', 'direction', getattr(args, 'direction', None))
    _set(raw, 'corrector', 'box_half_width', getattr(args, 'box_l', None))
    _set(raw, 'corrector', 'generations', getattr(args, 'generations', None))
    _set(raw, 'rates_1d', 'eps_min_exp', getattr(args, 'eps_min_exp', None))
    _set(raw, 'rates_1d', 'eps_max_exp', getattr(args, 'eps_max_exp', None))
    return raw


def run(config: ExperimentConfig, workers: int = 1, db: Optional[DatabaseManager] = None) -> int:
    """Run one validated config; returns the exit code"""
    out_dir = config.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    db = db or DatabaseManager(out_dir / DB_NAME)
    run_id = db.start_run(config.command, config.hash)
    writer = ArtifactWriter(out_dir, config.hash, config.values['plot'])
    logger.info(f"Run {run_id}: {config.command} (config {config.hash[:12]}, {workers} workers)")

    try:
        metrics = COMMAND_HANDLERS[config.command](config, writer, workers)
        writer.manifest()
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        db.finish_run(run_id, e.exit_code, str(e))
        return e.exit_code
    except NumericalError as e:
        logger.error(f"Numerical failure in {config.command}: {e}")
        db.finish_run(run_id, e.exit_code, str(e))
        return e.exit_code
    except LabError as e:
        logger.error(f"{config.command} failed: {e}")
        db.finish_run(run_id, e.exit_code, str(e))
        return e.exit_code

    db.add_artifacts(run_id, writer.entries())
    db.add_metrics(run_id, {k: v for k, v in metrics.items() if v is not None})
    db.finish_run(run_id, EXIT_OK, f"{len(writer.files)} files written")
    logger.info(f"Run {run_id} finished: {len(writer.files)} files in {out_dir}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        config = ExperimentConfig.from_dict(raw_config_from_args(args))
        workers = resolve_workers(config.values, args.workers)
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        return e.exit_code
    return run(config, workers)


if __name__ == "__main__":
    sys.exit(main())
