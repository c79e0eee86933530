"""
Experiment Configuration
Versioned schema, defaults, named presets and builders that turn a validated
config into point sets, coefficients and solver settings
"""

import copy
import hashlib
import json
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Any, Optional, Callable

import numpy as np
from jsonschema import Draft202012Validator

from coefficient_builder import DefectProfile, PeriodicCoefficient, PerturbedCoefficient
from defect_geometry import DefectPointSet
from divform_solver import SolverConfig
from lab_errors import ConfigError
import logging

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
COMMANDS = ['geometry-certify', 'defect-profile', 'corrector', 'potential', 'homogenize', 'rates-1d', 'rates']
WORKERS_ENV = 'HOMLAB_WORKERS'
# settings that never change a result
RUNTIME_KEYS = ('output_dir', 'workers', 'plot')

_number_list = {'type': 'array', 'items': {'type': 'number'}}
_integer_list = {'type': 'array', 'items': {'type': 'integer'}}

CONFIG_SCHEMA = {
    '$schema': 'https://json-schema.org/draft/2020-12/schema',
    'type': 'object',
    'additionalProperties': False,
    'required': ['schema_version', 'command'],
    'properties': {
        'schema_version': {'const': SCHEMA_VERSION},
        'command': {'enum': COMMANDS},
        'preset': {'type': 'string'},
        'd': {'type': 'integer', 'minimum': 1, 'maximum': 3},
        'output_dir': {'type': 'string'},
        'workers': {'type': 'integer', 'minimum': 1},
        'plot': {'type': 'boolean'},
        'source': {'enum': ['one', 'sin']},
        'geometry': {
            'type': 'object', 'additionalProperties': False,
            'properties': {
                'c0': {'type': 'number', 'exclusiveMinimum': 1},
                'index_bound': {'type': 'integer', 'minimum': 1, 'maximum': 60},
                'samples_per_cell': {'type': 'integer', 'minimum': 1},
                'fit_exponents': _integer_list,
                'exhaustion_n_max': {'type': 'integer', 'minimum': 1},
                'strict': {'type': 'boolean'},
            },
        },
        'coefficient': {
            'type': 'object', 'additionalProperties': False,
            'properties': {
                'periodic': {'enum': ['constant', 'sin1d', 'laminate2d', 'product_cos', 'checker3d']},
                'value': {'type': 'number', 'exclusiveMinimum': 0},
                'modulation': {'type': 'number'},
                'index_bound': {'type': 'integer', 'minimum': 1, 'maximum': 60},
                'profile': {
                    'type': ['object', 'null'], 'additionalProperties': False,
                    'properties': {
                        'kind': {'enum': ['bump', 'algebraic']},
                        'amplitude': {'type': ['number', 'array']},
                        'rho': {'type': 'number', 'exclusiveMinimum': 0},
                        'beta': {'type': 'number', 'exclusiveMinimum': 0},
                        'r_cut': {'type': ['number', 'null'], 'exclusiveMinimum': 0},
                    },
                },
            },
        },
        'solver': {
            'type': 'object', 'additionalProperties': False,
            'properties': {
                'rel_tol': {'type': 'number', 'exclusiveMinimum': 0, 'maximum': 1e-3},
                'max_iter': {'type': 'integer', 'minimum': 1},
                'preconditioner': {'enum': ['jacobi', 'multigrid']},
            },
        },
        'profile_study': {
            'type': 'object', 'additionalProperties': False,
            'properties': {
                'r_values': _number_list,
                'cell_generations': {'type': 'integer', 'minimum': 0},
                'radii_exponents': _integer_list,
                'resolution': {'type': 'number', 'exclusiveMinimum': 0},
                'tail_radii': _number_list,
                'tail_index_bound': {'type': 'integer', 'minimum': 1},
            },
        },
        'corrector': {
            'type': 'object', 'additionalProperties': False,
            'properties': {
                'cells_per_unit': {'type': 'integer', 'minimum': 4},
                'direction': {'type': 'integer', 'minimum': 0},
                'box_half_width': {'type': 'number', 'exclusiveMinimum': 0},
                'generations': {'type': 'integer', 'minimum': 0},
                'truncation_check': {'type': 'boolean'},
                'reference_half_width': {'type': 'number', 'exclusiveMinimum': 0},
            },
        },
        'rates_1d': {
            'type': 'object', 'additionalProperties': False,
            'properties': {
                'eps_min_exp': {'type': 'integer', 'minimum': 1},
                'eps_max_exp': {'type': 'integer', 'minimum': 0},
                'samples_per_period': {'type': 'integer', 'minimum': 32},
                'growth_n_max': {'type': 'integer', 'minimum': 0, 'maximum': 24},
                'hook_betas': _number_list,
            },
        },
        'rates': {
            'type': 'object', 'additionalProperties': False,
            'properties': {
                'eps_exponents': _integer_list,
                'nodes_per_period': {'type': 'integer', 'minimum': 16},
                'interior': {'type': 'array', 'items': {'type': 'number'}, 'minItems': 2, 'maxItems': 2},
                'check_refinement': {'type': 'boolean'},
                'include_perturbed': {'type': 'boolean'},
                'flux_radii': _number_list,
            },
        },
    },
}

DEFAULTS = {
    'schema_version': SCHEMA_VERSION,
    'd': 2,
    'output_dir': 'homlab_out',
    'workers': 1,
    'plot': False,
    'source': 'one',
    'geometry': {
        'c0': 2.0, 'index_bound': 16, 'samples_per_cell': 64,
        'fit_exponents': list(range(4, 21)), 'exhaustion_n_max': 12, 'strict': True,
    },
    'coefficient': {
        'periodic': 'constant', 'value': 1.0, 'modulation': 0.0, 'index_bound': 30,
        'profile': {'kind': 'bump', 'amplitude': 1.0, 'rho': 0.5, 'beta': 2.0, 'r_cut': None},
    },
    'solver': {'rel_tol': 1e-9, 'max_iter': 5000, 'preconditioner': 'multigrid'},
    'profile_study': {
        'r_values': [2.0], 'cell_generations': 4, 'radii_exponents': [4, 6, 8, 10, 12],
        'resolution': 0.02, 'tail_radii': [0.125, 0.25], 'tail_index_bound': 4,
    },
    'corrector': {
        'cells_per_unit': 8, 'direction': 0, 'box_half_width': 16.0, 'generations': 3,
        'truncation_check': True, 'reference_half_width': 16.0,
    },
    'rates_1d': {
        'eps_min_exp': 12, 'eps_max_exp': 3, 'samples_per_period': 32,
        'growth_n_max': 20, 'hook_betas': [0.5, 2.0],
    },
    'rates': {
        'eps_exponents': [2, 3, 4, 5], 'nodes_per_period': 16, 'interior': [0.25, 0.75],
        'check_refinement': False, 'include_perturbed': True, 'flux_radii': [2.0, 4.0, 8.0],
    },
}


def _init_presets() -> Dict[str, Dict[str, Any]]:
    """Named experiment presets, merged over the defaults"""
    no_profile = {'profile': None}
    return {
        'sin-bump': {
            'command': 'rates-1d', 'd': 1,
            'coefficient': {'periodic': 'sin1d', 'profile': {'kind': 'bump', 'amplitude': 1.0, 'rho': 0.5}},
        },
        'periodic-1d': {
            'command': 'rates-1d', 'd': 1,
            'coefficient': dict(no_profile, periodic='sin1d'),
        },
        'algebraic-1d': {
            'command': 'rates-1d', 'd': 1,
            'coefficient': {'periodic': 'sin1d',
                            'profile': {'kind': 'algebraic', 'amplitude': 1.0, 'rho': 0.5, 'beta': 2.0, 'r_cut': 1024.0}},
        },
        'periodic-2d': {
            'command': 'rates', 'd': 2,
            'coefficient': dict(no_profile, periodic='product_cos'),
        },
        'bump-2d': {
            'command': 'rates', 'd': 2,
            'coefficient': {'periodic': 'product_cos', 'profile': {'kind': 'bump', 'amplitude': 1.0, 'rho': 0.5}},
        },
        'periodic-3d': {
            'command': 'rates', 'd': 3,
            'coefficient': dict(no_profile, periodic='product_cos'),
            'rates': {'eps_exponents': [2, 3, 4]},
        },
        'bump-3d': {
            'command': 'rates', 'd': 3,
            'coefficient': {'periodic': 'product_cos', 'profile': {'kind': 'bump', 'amplitude': 1.0, 'rho': 0.5}},
            'rates': {'eps_exponents': [2, 3, 4]},
        },
    }


PRESETS = _init_presets()


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Recursive dict merge; None and lists in override replace wholesale"""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def validate_config(raw: Dict[str, Any]) -> Dict[str, Any]:
    """Schema check, preset expansion and defaults; raises ConfigError listing every violation"""
    validator = Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        details = '; '.join(f"{'/'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}" for e in errors)
        raise ConfigError(f"config does not match schema version {SCHEMA_VERSION}: {details}")

    config = copy.deepcopy(DEFAULTS)
    preset = raw.get('preset')
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset '{preset}', choose from {sorted(PRESETS)}")
        config = deep_merge(config, PRESETS[preset])
    config = deep_merge(config, raw)

    d = config['d']
    if config['command'] == 'rates-1d' and d != 1:
        raise ConfigError("rates-1d runs in d=1")
    lo, hi = config['rates']['interior']
    if not 0.0 < lo < hi < 1.0:
        raise ConfigError(f"interior box [{lo}, {hi}] must lie strictly inside (0, 1)")
    rates_1d = config['rates_1d']
    if rates_1d['eps_max_exp'] >= rates_1d['eps_min_exp']:
        raise ConfigError("rates_1d needs eps_max_exp < eps_min_exp (eps runs from 2^-max to 2^-min)")
    return config


def load_config_file(path: str) -> Dict[str, Any]:
    """Read a JSON or TOML config file"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        if path.suffix == '.toml':
            with open(path, 'rb') as handle:
                return tomllib.load(handle)
        with open(path, 'r', encoding='utf-8') as handle:
            return json.load(handle)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"cannot parse {path}: {e}")


def config_hash(config: Dict[str, Any]) -> str:
    """sha256 of the canonical JSON (sorted keys, compact separators) without the runtime-only keys"""
    hashed = {key: value for key, value in config.items() if key not in RUNTIME_KEYS}
    payload = json.dumps(hashed, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(payload.encode('utf-8')).hexdigest()


def resolve_workers(config: Dict[str, Any], cli_workers: Optional[int] = None) -> int:
    """--workers beats HOMLAB_WORKERS beats the config value"""
    if cli_workers is not None:
        workers = cli_workers
    elif os.environ.get(WORKERS_ENV):
        try:
            workers = int(os.environ[WORKERS_ENV])
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got '{os.environ[WORKERS_ENV]}'")
    else:
        workers = config.get('workers', 1)
    if workers < 1:
        raise ConfigError(f"worker count must be positive, got {workers}")
    return workers


@dataclass
class ExperimentConfig:
    """A validated config with its hash"""
    values: Dict[str, Any]

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> 'ExperimentConfig':
        return cls(validate_config(raw))

    @property
    def command(self) -> str:
        return self.values['command']

    @property
    def d(self) -> int:
        return self.values['d']

    @property
    def output_dir(self) -> Path:
        return Path(self.values['output_dir'])

    @property
    def hash(self) -> str:
        return config_hash(self.values)

    def section(self, name: str) -> Dict[str, Any]:
        return self.values[name]

    def point_set(self, index_bound: Optional[int] = None) -> DefectPointSet:
        geometry = self.values['geometry']
        bound = index_bound if index_bound is not None else self.values['coefficient']['index_bound']
        return DefectPointSet(self.d, geometry['c0'], bound)

    def profile(self) -> Optional[DefectProfile]:
        spec = self.values['coefficient']['profile']
        if spec is None:
            return None
        return DefectProfile(self.d, spec.get('kind', 'bump'), spec.get('amplitude', 1.0),
                             rho=spec.get('rho', 0.5), beta=spec.get('beta', 2.0), r_cut=spec.get('r_cut'))

    def periodic(self) -> PeriodicCoefficient:
        spec = self.values['coefficient']
        return PeriodicCoefficient(self.d, spec['periodic'], spec['value'])

    def coefficient(self) -> PerturbedCoefficient:
        profile = self.profile()
        point_set = self.point_set() if profile is not None else None
        return PerturbedCoefficient(self.periodic(), profile, point_set,
                                    modulation=self.values['coefficient']['modulation'])

    def solver(self) -> SolverConfig:
        spec = self.values['solver']
        return SolverConfig(rel_tol=spec['rel_tol'], max_iter=spec['max_iter'], preconditioner=spec['preconditioner'])

    def source(self) -> Callable[[np.ndarray], np.ndarray]:
        if self.values['source'] == 'sin':
            return lambda x: np.prod(np.sin(np.pi * np.asarray(x).reshape(x.shape[0], -1)), axis=1)
        return lambda x: np.ones(np.asarray(x).shape[0])

    def eps_list_1d(self) -> List[float]:
        spec = self.values['rates_1d']
        return [2.0 ** -k for k in range(spec['eps_max_exp'], spec['eps_min_exp'] + 1)]

    def eps_list(self) -> List[float]:
        return [2.0 ** -k for k in self.values['rates']['eps_exponents']]
