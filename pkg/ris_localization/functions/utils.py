import copy
import hashlib
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from ris_localization.functions.channel import ArrayConfig, WaveformConfig
from ris_localization.functions.errors import (
    ConfigError,
    ConfigFileError,
    ConfigKeyError,
    ConfigSyntaxError,
    ConfigTypeError,
    ConfigValueError,
    RisLocalizationError,
)
from ris_localization.functions.geometry import Scene

logger = logging.getLogger('ris_localization')

DEFAULT_CONFIG = Path(__file__).parent.parent.joinpath('config.yml')
SOLVER_NAMES = ('dcs_somp', 'omp', 'sbl', 'gsbl', 'tmsbl', 'amp')
SWEEP_NAMES = ('snr_db', 'n_blocks', 'n_elements', 'ris_position')
THREADS_VARIABLE = 'RIS_LOCATE_THREADS'

# expected type of every configuration key, a trailing ? allows null
SCHEMA = {
    'scene': {'bs_position': 'point', 'ris_position': 'point', 'ue_position': 'point', 'scatterers_br': 'points',
              'scatterers_rm': 'points'},
    'arrays': {'n_bs': 'int', 'n_ue': 'int', 'n_ris': 'int', 'element_spacing_over_wavelength': 'float'},
    'waveform': {'carrier_hz': 'float', 'bandwidth_hz': 'float', 'n_subcarriers': 'int', 'n_blocks': 'int',
                 'n_stage1_symbols': 'int', 'transmit_energy': 'float', 'snr_db': 'floats',
                 'reflection_loss_db': 'float', 'normalize_gain': 'bool', 'ris_phase_bits': 'int?',
                 'gain_reference_elements': 'int', 'stage1_attempts': 'int'},
    'solver': {'solvers': 'strings', 'max_iterations': 'int', 'convergence_tol': 'float',
               'toa_grid_resolution': 'int?', 'kappa': 'float', 'amp_damping': 'float', 'amp_iterations': 'int',
               'amp_alpha': 'float', 'omp_atoms': 'int', 'noise_floor': 'float'},
    'experiment': {'sweep': 'str', 'values': 'list?', 'n_trials': 'int', 'seed': 'int', 'lattice_step': 'float',
                   'heatmap_extent': 'floats', 'heatmap_ue': 'point', 'complexity_n_ris': 'ints',
                   'complexity_n_blocks': 'ints'},
    'output': {'directory': 'str', 'prefix': 'str', 'save_trials': 'bool'},
}


@dataclass(frozen=True)
class SceneConfig:
    bs_position: tuple
    ris_position: tuple
    ue_position: tuple
    scatterers_br: tuple
    scatterers_rm: tuple

    def build(self, ris_position=None, ue_position=None):
        return Scene(
            bs_position=self.bs_position,
            ris_position=self.ris_position if ris_position is None else ris_position,
            ue_position=self.ue_position if ue_position is None else ue_position,
            scatterers_br=self.scatterers_br, scatterers_rm=self.scatterers_rm)


@dataclass(frozen=True)
class SolverConfig:
    solvers: tuple = ('tmsbl',)
    max_iterations: int = 100
    convergence_tol: float = 1e-6
    toa_grid_resolution: int = None
    kappa: float = 2.0
    amp_damping: float = 0.7
    amp_iterations: int = 50
    amp_alpha: float = 1.5
    omp_atoms: int = 1
    noise_floor: float = 1e-12

    def toa_resolution(self, n_subcarriers):
        return self.toa_grid_resolution if self.toa_grid_resolution is not None else 100 * n_subcarriers


@dataclass(frozen=True)
class ExperimentConfig:
    sweep: str = 'snr_db'
    values: tuple = None
    n_trials: int = 100
    seed: int = 0
    lattice_step: float = 0.5
    heatmap_extent: tuple = (0.0, 5.0)
    heatmap_ue: tuple = (5.0, 1.0)
    complexity_n_ris: tuple = (8,)
    complexity_n_blocks: tuple = (60,)


@dataclass(frozen=True)
class OutputConfig:
    directory: str = 'results'
    prefix: str = 'ris'
    save_trials: bool = False


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration; `resolved` keeps the merged YAML mapping it was built from"""
    scene: SceneConfig
    arrays: ArrayConfig
    waveform: WaveformConfig
    snr_db: tuple
    solver: SolverConfig
    experiment: ExperimentConfig
    output: OutputConfig
    resolved: dict

    def to_dict(self):
        return copy.deepcopy(self.resolved)

    def sweep_values(self):
        if self.experiment.values is not None:
            return self.experiment.values
        if self.experiment.sweep == 'snr_db':
            return self.snr_db
        raise ConfigValueError('experiment.values', f'sweep {self.experiment.sweep} needs explicit values')


def _read_yaml(path):
    path = Path(path)
    try:
        with open(path, 'r') as config_yml:
            content = yaml.safe_load(config_yml)
    except OSError as e:
        raise ConfigFileError(f'Cannot read configuration file {path}: {e.strerror or e}')
    except yaml.YAMLError as e:
        mark = getattr(e, 'problem_mark', None)
        problem = getattr(e, 'problem', None) or str(e)
        raise ConfigSyntaxError(f'{path}: {problem}', line=None if mark is None else mark.line + 1)
    if content is None:
        return {}
    if not isinstance(content, dict):
        raise ConfigSyntaxError(f'{path}: top level must be a mapping of sections, got {type(content).__name__}')
    return content


def _merge(base, update):
    merged = copy.deepcopy(base)
    for section, values in (update or {}).items():
        if section not in SCHEMA:
            raise ConfigKeyError(section)
        if values is None:
            continue
        if not isinstance(values, dict):
            raise ConfigTypeError(section, 'mapping', values)
        for key, value in values.items():
            if key not in SCHEMA[section]:
                raise ConfigKeyError(f'{section}.{key}')
            merged.setdefault(section, {})[key] = value
    return merged


def _is_number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _check_type(key, kind, value):
    """Check `value` against a schema kind and return it in canonical form"""
    if kind.endswith('?'):
        if value is None:
            return None
        kind = kind[:-1]
    if kind == 'int':
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigTypeError(key, 'integer', value)
        return value
    if kind == 'float':
        if not _is_number(value) or not np.isfinite(value):
            raise ConfigTypeError(key, 'number', value)
        return float(value)
    if kind == 'bool':
        if not isinstance(value, bool):
            raise ConfigTypeError(key, 'boolean', value)
        return value
    if kind == 'str':
        if not isinstance(value, str):
            raise ConfigTypeError(key, 'string', value)
        return value
    if kind == 'point':
        if not isinstance(value, (list, tuple)) or len(value) != 2 or not all(_is_number(v) for v in value):
            raise ConfigTypeError(key, 'list of two numbers', value)
        return tuple(float(v) for v in value)
    if kind == 'points':
        if not isinstance(value, (list, tuple)):
            raise ConfigTypeError(key, 'list of [x, y] points', value)
        return tuple(_check_type(f'{key}[{i}]', 'point', v) for i, v in enumerate(value))
    if kind == 'floats':
        if not isinstance(value, (list, tuple)) or len(value) == 0 or not all(_is_number(v) for v in value):
            raise ConfigTypeError(key, 'non-empty list of numbers', value)
        return tuple(float(v) for v in value)
    if kind == 'ints':
        if not isinstance(value, (list, tuple)) or len(value) == 0 or not all(
                isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigTypeError(key, 'non-empty list of integers', value)
        return tuple(value)
    if kind == 'strings':
        if not isinstance(value, (list, tuple)) or len(value) == 0 or not all(isinstance(v, str) for v in value):
            raise ConfigTypeError(key, 'non-empty list of strings', value)
        return tuple(value)
    if kind == 'list':
        if not isinstance(value, (list, tuple)) or len(value) == 0:
            raise ConfigTypeError(key, 'non-empty list', value)
        return tuple(value)
    raise ValueError(f'Unknown schema kind {kind}')


def _sweep_values(sweep, values):
    """Convert sweep values to the type the sweep variable needs"""
    if values is None:
        return None
    if sweep == 'snr_db':
        return _check_type('experiment.values', 'floats', list(values))
    if sweep in ['n_blocks', 'n_elements']:
        checked = tuple(_check_type(f'experiment.values[{i}]', 'int', v) for i, v in enumerate(values))
        if min(checked) < (2 if sweep == 'n_elements' else 1):
            raise ConfigValueError('experiment.values', f'{sweep} values are too small: {list(checked)}')
    else:
        checked = _check_type('experiment.values', 'points', list(values))
    if sweep != 'ris_position' and list(checked) != sorted(checked):
        raise ConfigValueError('experiment.values', f'{sweep} values must be in increasing order')
    return checked


def _build(merged):
    sections = {}
    for section, keys in SCHEMA.items():
        values = merged.get(section, {})
        missing = [k for k in keys if k not in values]
        if missing:
            raise ConfigKeyError(f'{section}.{missing[0]}', f'missing configuration key: {section}.{missing[0]}')
        sections[section] = {k: _check_type(f'{section}.{k}', kind, values[k]) for k, kind in keys.items()}

    scene = SceneConfig(**sections['scene'])
    try:
        scene.build()
    except RisLocalizationError as e:
        raise ConfigValueError('scene', str(e))

    arrays = ArrayConfig(**sections['arrays'])
    waveform_args = dict(sections['waveform'])
    snr_db = waveform_args.pop('snr_db')
    waveform = WaveformConfig(**waveform_args).with_snr(snr_db[0])
    n_pairs = (1 + len(scene.scatterers_br)) * (1 + len(scene.scatterers_rm))
    if waveform.n_stage1_symbols <= n_pairs:
        raise ConfigValueError(
            'waveform.n_stage1_symbols', f'must exceed the number of path pairs ({n_pairs}), '
                                         f'got {waveform.n_stage1_symbols}')

    solver = SolverConfig(**sections['solver'])
    unknown = [s for s in solver.solvers if s not in SOLVER_NAMES]
    if unknown:
        raise ConfigValueError('solver.solvers', f'unknown solver(s) {unknown}, options are {list(SOLVER_NAMES)}')
    for key in ['max_iterations', 'amp_iterations', 'omp_atoms']:
        if getattr(solver, key) < 1:
            raise ConfigValueError(f'solver.{key}', 'must be at least 1')
    if solver.toa_grid_resolution is not None and solver.toa_grid_resolution < waveform.n_subcarriers:
        raise ConfigValueError('solver.toa_grid_resolution', 'must be at least the number of subcarriers')
    if not 0 < solver.amp_damping <= 1:
        raise ConfigValueError('solver.amp_damping', 'must be in (0, 1]')
    if not solver.noise_floor > 0 or not solver.convergence_tol > 0:
        raise ConfigValueError('solver.noise_floor', 'noise floor and convergence tolerance must be positive')

    experiment_args = dict(sections['experiment'])
    if experiment_args['sweep'] not in SWEEP_NAMES:
        raise ConfigValueError('experiment.sweep', f'unknown sweep {experiment_args["sweep"]}, '
                                                   f'options are {list(SWEEP_NAMES)}')
    experiment_args['values'] = _sweep_values(experiment_args['sweep'], experiment_args['values'])
    experiment = ExperimentConfig(**experiment_args)
    if experiment.n_trials < 1:
        raise ConfigValueError('experiment.n_trials', 'must be at least 1')
    if not experiment.lattice_step > 0:
        raise ConfigValueError('experiment.lattice_step', 'must be positive')
    if len(experiment.heatmap_extent) != 2 or experiment.heatmap_extent[0] >= experiment.heatmap_extent[1]:
        raise ConfigValueError('experiment.heatmap_extent', 'must be [low, high] with low < high')
    if min(experiment.complexity_n_ris) < 2 or min(experiment.complexity_n_blocks) < 1:
        raise ConfigValueError('experiment.complexity_n_ris', 'complexity dimensions are too small')

    return RunConfig(scene=scene, arrays=arrays, waveform=waveform, snr_db=snr_db, solver=solver,
                     experiment=experiment, output=OutputConfig(**sections['output']), resolved=merged)


def load_config(path=None, overrides=None):
    """
    Load the packaged defaults, merge a user configuration file and optional overrides, and validate the result.

    Parameters
    ----------
    path: str, pathlib.Path or None
        YAML file with any of the sections scene, arrays, waveform, solver, experiment and output. Keys that are not
        given keep their default.
    overrides: dict or None
        Nested mapping {section: {key: value}} applied after the file

    Returns
    -------
    RunConfig

    Raises
    ------
    ConfigError
        ConfigFileError, ConfigSyntaxError, ConfigKeyError, ConfigTypeError or ConfigValueError
    """
    merged = _merge(_read_yaml(DEFAULT_CONFIG), _read_yaml(path) if path is not None else {})
    merged = _merge(merged, overrides)
    try:
        return _build(merged)
    except ConfigError:
        raise
    except RisLocalizationError as e:
        raise ConfigValueError('config', str(e))


def check_config():
    """Load and check the packaged default configuration"""
    return load_config()


def str2int(string, digits=8):
    return int(hashlib.sha1(string.encode('utf-8')).hexdigest(), 16) % (10 ** digits)


def format_value(value):
    """Locale-independent text for a sweep value, positions as x;y"""
    if isinstance(value, (tuple, list, np.ndarray)):
        return ';'.join(format_value(v) for v in value)
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return '%.9g' % float(value)


def trial_seed(seed, variable, value, trial):
    """Seed of one Monte Carlo trial, independent of the order trials are run in"""
    return str2int(f'{seed}_{variable}_{format_value(value)}_{trial}')


def n_workers():
    """Number of worker processes, from RIS_LOCATE_THREADS if set"""
    value = os.environ.get(THREADS_VARIABLE)
    if value is None or value.strip() == '':
        return os.cpu_count() or 1
    try:
        workers = int(value)
    except ValueError:
        raise ConfigValueError(THREADS_VARIABLE, f'must be a positive integer, got {value!r}')
    if workers < 1:
        raise ConfigValueError(THREADS_VARIABLE, f'must be a positive integer, got {value!r}')
    return workers
