#!/usr/bin/env python3
"""
Tests for experiment configs, the command-line runner, its artifacts and the run store
"""

import json
import math
import sys

import numpy as np
import pytest

from database import DatabaseManager
from experiment_config import (
    DEFAULTS, PRESETS, WORKERS_ENV, ExperimentConfig, config_hash, load_config_file, resolve_workers,
    validate_config,
)
from lab_errors import ConfigError
from run_lab import DB_NAME, MANIFEST_NAME, _plain, build_parser, main, sha256_file


def _write_json(path, payload):
    path.write_text(json.dumps(payload), encoding='utf-8')
    return str(path)


def _quick_1d(out_dir, *extra):
    return ['rates-1d', '--preset', 'periodic-1d', '--out', str(out_dir), '--eps-min-exp', '6'] + list(extra)


def test_defaults_and_presets():
    config = validate_config({'schema_version': 1, 'command': 'rates'})
    assert config['d'] == DEFAULTS['d']
    assert config['rates']['eps_exponents'] == [2, 3, 4, 5]
    assert config['corrector']['cells_per_unit'] == 8

    preset = validate_config({'schema_version': 1, 'command': 'rates', 'preset': 'bump-3d'})
    assert preset['d'] == 3
    assert preset['rates']['eps_exponents'] == [2, 3, 4]
    assert preset['rates']['nodes_per_period'] == 16
    assert preset['coefficient']['profile']['kind'] == 'bump'
    # the command given explicitly wins over the preset
    assert preset['command'] == 'rates'
    assert set(PRESETS) >= {'sin-bump', 'periodic-1d', 'algebraic-1d', 'periodic-2d', 'bump-2d'}


@pytest.mark.parametrize('raw', [
    {'schema_version': 2, 'command': 'rates'},
    {'schema_version': 1, 'command': 'unknown'},
    {'schema_version': 1, 'command': 'rates', 'colour': 'blue'},
    {'schema_version': 1, 'command': 'rates', 'solver': {'rel_tol': 0.1}},
    {'schema_version': 1, 'command': 'rates', 'rates': {'interior': [0.0, 0.5]}},
    {'schema_version': 1, 'command': 'rates-1d', 'd': 2},
    {'schema_version': 1, 'command': 'rates-1d', 'd': 1, 'rates_1d': {'eps_min_exp': 3, 'eps_max_exp': 3}},
    {'schema_version': 1, 'command': 'rates', 'preset': 'nothing'},
])
def test_invalid_configs(raw):
    with pytest.raises(ConfigError):
        validate_config(raw)


def test_config_hash_ignores_runtime_keys():
    base = validate_config({'schema_version': 1, 'command': 'rates'})
    moved = validate_config({'schema_version': 1, 'command': 'rates', 'output_dir': 'elsewhere', 'workers': 4,
                             'plot': True})
    changed = validate_config({'schema_version': 1, 'command': 'rates', 'solver': {'rel_tol': 1e-10}})
    assert config_hash(base) == config_hash(moved)
    assert config_hash(base) != config_hash(changed)
    assert len(config_hash(base)) == 64


def test_load_config_file(tmp_path):
    json_path = _write_json(tmp_path / 'a.json', {'schema_version': 1, 'command': 'rates'})
    assert load_config_file(json_path)['command'] == 'rates'
    toml_path = tmp_path / 'b.toml'
    toml_path.write_text('schema_version = 1\ncommand = "corrector"\n[corrector]\ncells_per_unit = 16\n',
                         encoding='utf-8')
    assert load_config_file(str(toml_path))['corrector']['cells_per_unit'] == 16
    broken = tmp_path / 'c.json'
    broken.write_text('{not json', encoding='utf-8')
    with pytest.raises(ConfigError):
        load_config_file(str(broken))
    with pytest.raises(ConfigError):
        load_config_file(str(tmp_path / 'missing.json'))


def test_resolve_workers(monkeypatch):
    monkeypatch.delenv(WORKERS_ENV, raising=False)
    assert resolve_workers({'workers': 3}) == 3
    monkeypatch.setenv(WORKERS_ENV, '5')
    assert resolve_workers({'workers': 3}) == 5
    assert resolve_workers({'workers': 3}, 2) == 2
    monkeypatch.setenv(WORKERS_ENV, 'many')
    with pytest.raises(ConfigError):
        resolve_workers({'workers': 3})
    with pytest.raises(ConfigError):
        resolve_workers({'workers': 3}, 0)


def test_experiment_config_builders():
    config = ExperimentConfig.from_dict({'schema_version': 1, 'command': 'rates', 'preset': 'bump-2d'})
    coef = config.coefficient()
    assert coef.has_defects and coef.d == 2
    assert config.eps_list() == [0.25, 0.125, 0.0625, 0.03125]
    assert config.solver().preconditioner == 'multigrid'
    source = config.source()
    assert np.all(source(np.zeros((3, 2))) == 1.0)

    oned = ExperimentConfig.from_dict({'schema_version': 1, 'command': 'rates-1d', 'preset': 'sin-bump'})
    eps = oned.eps_list_1d()
    assert len(eps) == 10 and eps[0] == 0.125 and eps[-1] == 2.0 ** -12
    assert oned.periodic().preset == 'sin1d'


def test_plain_values():
    payload = _plain({'a': np.float64(1.0 / 3.0), 'b': float('nan'), 'c': np.arange(2), 'd': np.bool_(True)})
    assert payload == {'a': 0.333333333333, 'b': None, 'c': [0, 1], 'd': True}


def test_parser_flags():
    args = build_parser().parse_args(['corrector', '--box-l', '8', '--direction', '1', '--dim', '2'])
    assert args.command == 'corrector'
    assert args.box_l == 8.0 and args.direction == 1 and args.dim == 2
    with pytest.raises(SystemExit):
        build_parser().parse_args(['rates', '--preset', 'nothing'])


def test_rates_1d_run(tmp_path):
    out = tmp_path / 'run'
    assert main(_quick_1d(out, '--plot')) == 0
    csv_lines = (out / 'rates_1d.csv').read_text(encoding='utf-8').splitlines()
    assert csv_lines[0].startswith('# config_hash: ')
    assert csv_lines[1].startswith('epsilon,l2_R,h1_R')
    assert len(csv_lines) == 2 + 4

    summary = json.loads((out / 'rates_1d.json').read_text(encoding='utf-8'))
    assert summary['a_star'] == pytest.approx(math.sqrt(3.0), abs=1e-8)
    assert summary['config_hash'] == csv_lines[0].split(': ')[1]
    assert 'homlab-plot' in (out / 'rates_1d.html').read_text(encoding='utf-8')

    manifest = json.loads((out / MANIFEST_NAME).read_text(encoding='utf-8'))
    paths = [entry['path'] for entry in manifest['files']]
    assert paths == sorted(paths)
    assert DB_NAME not in paths and MANIFEST_NAME not in paths
    assert 'rates_1d_l2_R.dat' in paths
    for entry in manifest['files']:
        assert sha256_file(out / entry['path']) == entry['sha256']

    db = DatabaseManager(out / DB_NAME)
    run = db.get_runs()[0]
    assert run['status'] == 'completed' and run['exit_code'] == 0
    assert db.get_metrics(run['id'])['l2_slope'] > 0.5
    assert [a['path'] for a in db.get_artifacts(run['id'])] == paths


def test_manifest_is_reproducible(tmp_path):
    first, second = tmp_path / 'first', tmp_path / 'second'
    assert main(_quick_1d(first)) == 0
    assert main(_quick_1d(second, '--workers', '2')) == 0
    assert (first / MANIFEST_NAME).read_bytes() == (second / MANIFEST_NAME).read_bytes()


def test_config_errors_exit_2(tmp_path):
    assert main(_quick_1d(tmp_path / 'a', '--dim', '2')) == 2
    assert main(['rates', '--config', str(tmp_path / 'missing.json')]) == 2

    out = tmp_path / 'b'
    assert main(['potential', '--dim', '1', '--out', str(out)]) == 2
    run = DatabaseManager(out / DB_NAME).get_runs()[0]
    assert run['status'] == 'failed' and run['exit_code'] == 2
    assert not (out / MANIFEST_NAME).exists()


def test_numerical_failure_exit_3(tmp_path):
    config = _write_json(tmp_path / 'stiff.json', {
        'schema_version': 1, 'command': 'corrector', 'd': 2,
        'coefficient': {'periodic': 'product_cos', 'profile': None},
        'solver': {'max_iter': 1, 'preconditioner': 'jacobi'},
    })
    out = tmp_path / 'out'
    assert main(['corrector', '--config', config, '--out', str(out)]) == 3
    run = DatabaseManager(out / DB_NAME).get_runs()[0]
    assert run['exit_code'] == 3


def test_homogenize_run(tmp_path):
    out = tmp_path / 'hom'
    assert main(['homogenize', '--preset', 'periodic-2d', '--out', str(out)]) == 0
    summary = json.loads((out / 'homogenized.json').read_text(encoding='utf-8'))
    a_star = np.array(summary['a_star'])
    assert a_star[0, 0] == pytest.approx(a_star[1, 1], rel=1e-8)
    assert 3.0 < a_star[0, 0] < 4.0
    assert not (out / 'flux_average.csv').exists()


def test_potential_run(tmp_path):
    out = tmp_path / 'pot'
    assert main(['potential', '--preset', 'periodic-2d', '--out', str(out)]) == 0
    summary = json.loads((out / 'potential.json').read_text(encoding='utf-8'))
    assert summary['potential_residual'] < 1e-6
    assert summary['potential_curl_residual'] < 1e-8
    assert (out / 'B_0_01.hmf').exists() and (out / 'B_1_01.hmf').exists()


def test_geometry_certify_run(tmp_path):
    config = _write_json(tmp_path / 'geo.json', {
        'schema_version': 1, 'command': 'geometry-certify',
        'geometry': {'samples_per_cell': 16, 'fit_exponents': [4, 5, 6, 7, 8], 'exhaustion_n_max': 4},
    })
    out = tmp_path / 'geo'
    assert main(['geometry-certify', '--config', config, '--index-bound', '6', '--out', str(out)]) == 0
    certificate = json.loads((out / 'certificate.json').read_text(encoding='utf-8'))
    assert certificate['h2_ratio_min'] >= 1.0
    assert certificate['inclusion_violations'] == 0
    assert (out / 'cell_counts.csv').exists() and (out / 'annulus_counts.csv').exists()
    assert (out / 'cell_volumes.csv').exists()


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, '-v']))
