import itertools
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
import pandas as pd
from tqdm import tqdm

from ris_localization.fit_data import fit_trial
from ris_localization.functions.errors import InvalidSceneError, RisLocalizationError, ShapeMismatchError
from ris_localization.functions.geometry import Segment, path_geometry
from ris_localization.functions.solvers import PRINTED_COMPLEXITY, PRINTED_DIMENSIONS, flop_estimate
from ris_localization.functions.utils import SOLVER_NAMES, format_value, n_workers, trial_seed
from ris_localization.prepare_data import prepare_trial

logger = logging.getLogger('ris_localization')

RESULT_COLUMNS = ['sweep_variable', 'sweep_value', 'solver', 'metric', 'value', 'n_trials', 'n_failed', 'seed']
COMPLEXITY_COLUMNS = ['algorithm', 'n_ris', 'n_subcarriers', 'n_blocks', 'formula_value', 'printed_value',
                      'annotation']
COMPLEXITY_ALGORITHMS = ['dcs_somp', 'sbl', 'gsbl', 'tmsbl', 'amp']


class SweepVariable(str, Enum):
    SNR_DB = 'snr_db'
    N_BLOCKS = 'n_blocks'
    N_ELEMENTS = 'n_elements'
    RIS_POSITION = 'ris_position'


class Metric(str, Enum):
    RMSE_AOR_RAD = 'RMSE_AOR_RAD'
    RMSE_TOA_S = 'RMSE_TOA_S'
    RMSE_POSITION_M = 'RMSE_POSITION_M'


@dataclass(frozen=True)
class SweepSpec:
    """
    One Monte Carlo experiment: every value of `variable` is simulated `n_trials` times for every solver.

    Trials at a sweep value share positions and differ in fading, noise, RIS phases and sounding beams. All solvers
    of a trial see the same realization.
    """
    variable: SweepVariable
    values: tuple
    solvers: tuple
    n_trials: int
    base_config: object
    seed: int
    metrics: tuple = tuple(Metric)
    ue_position: tuple = None

    def __post_init__(self):
        object.__setattr__(self, 'variable', SweepVariable(self.variable))
        object.__setattr__(self, 'values', tuple(self.values))
        object.__setattr__(self, 'solvers', tuple(self.solvers))
        if self.n_trials < 1:
            raise ValueError(f'n_trials must be at least 1, got {self.n_trials}')
        if len(self.values) == 0:
            raise ValueError('a sweep needs at least one value')
        if self.variable != SweepVariable.RIS_POSITION and list(self.values) != sorted(self.values):
            raise ValueError(f'{self.variable.name} values must be increasing, got {list(self.values)}')
        unknown = [s for s in self.solvers if s not in SOLVER_NAMES]
        if unknown or len(self.solvers) == 0:
            raise ValueError(f'unknown or missing solvers {unknown}, options are {list(SOLVER_NAMES)}')

    @classmethod
    def from_config(cls, config):
        return cls(variable=SweepVariable(config.experiment.sweep), values=config.sweep_values(),
                   solvers=config.solver.solvers, n_trials=config.experiment.n_trials, base_config=config,
                   seed=config.experiment.seed)


@dataclass
class ExperimentResult:
    """Aggregated RMSE rows, one row per trial and solver, and the wall-clock time of every sweep point"""
    table: pd.DataFrame
    trials: pd.DataFrame
    timings: dict = field(default_factory=dict)

    def to_csv(self, path):
        self.table.to_csv(path, index=False, float_format='%.9g')


def rmse(truths, estimates):
    """
    Root mean squared Euclidean error between paired truths and estimates.

    Parameters
    ----------
    truths: array-like
        (K,) scalars or (K, d) vectors
    estimates: array-like
        Same shape as truths

    Returns
    -------
    float
    """
    truths = np.asarray(truths, dtype=float)
    estimates = np.asarray(estimates, dtype=float)
    if truths.size == 0 or estimates.size == 0:
        raise ValueError('RMSE of an empty set of trials is undefined')
    if truths.shape != estimates.shape:
        raise ShapeMismatchError(f'truths {truths.shape} and estimates {estimates.shape} do not pair up')
    errors = (truths - estimates).reshape(truths.shape[0], -1)
    return float(np.sqrt(np.mean(np.sum(errors ** 2, axis=1))))


def _configure(spec, value):
    """Scene, arrays and waveform of one sweep point"""
    config = spec.base_config
    arrays, waveform = config.arrays, config.waveform
    ris_position = None
    if spec.variable == SweepVariable.SNR_DB:
        waveform = waveform.with_snr(float(value))
    elif spec.variable == SweepVariable.N_BLOCKS:
        waveform = replace(waveform, n_blocks=int(value))
    elif spec.variable == SweepVariable.N_ELEMENTS:
        arrays = arrays.with_elements(int(value))
    else:
        ris_position = value
    scene = config.scene.build(ris_position=ris_position, ue_position=spec.ue_position)
    return scene, arrays, waveform


def _run_trial(task):
    """Simulate one trial for all solvers; returns one record per solver"""
    scene, arrays, waveform, solver_config, solvers, seed, trial = task
    rng = np.random.default_rng(seed)
    los_br = path_geometry(scene, Segment.BS_RIS, 0)
    los_rm = path_geometry(scene, Segment.RIS_UE, 0)
    truth = dict(trial=trial, seed=seed, true_aor=los_rm.departure_angle, true_toa=los_rm.toa,
                 true_x=scene.ue_position[0], true_y=scene.ue_position[1], true_toa_cascade=los_br.toa + los_rm.toa)
    try:
        data = prepare_trial(scene, arrays, waveform, rng, solver_config=solver_config)
    except RisLocalizationError as e:
        return [dict(truth, solver=solver, failed=True, error=f'{type(e).__name__}: {e}') for solver in solvers]
    records = []
    for solver in solvers:
        try:
            estimate = fit_trial(data, solver, solver_config)
        except RisLocalizationError as e:
            records.append(dict(truth, solver=solver, failed=True, error=f'{type(e).__name__}: {e}'))
            continue
        records.append(dict(
            truth, solver=solver, failed=False, error='', aor=estimate.aor, toa=estimate.toa_ris_ue,
            toa_cascade=estimate.toa_cascade, x=estimate.position[0], y=estimate.position[1],
            dominant_path=estimate.dominant_path, grid_row=estimate.grid_row, delay_clamped=estimate.delay_clamped,
            iterations_used=estimate.iterations_used, converged=estimate.converged))
    return records


def _map_trials(tasks, workers, description):
    if workers == 1 or len(tasks) == 1:
        return [_run_trial(task) for task in tqdm(tasks, desc=description, leave=False)]
    with ProcessPoolExecutor(max_workers=workers) as executor:
        chunksize = max(1, len(tasks) // (4 * workers))
        return list(tqdm(executor.map(_run_trial, tasks, chunksize=chunksize), total=len(tasks), desc=description,
                         leave=False))


def _aggregate(trials, spec, value):
    rows = []
    for solver in spec.solvers:
        records = trials[trials.solver == solver]
        succeeded = records[~records.failed]
        n_failed = int(records.failed.sum())
        for metric in spec.metrics:
            if len(succeeded) == 0:
                score = np.nan
            elif metric == Metric.RMSE_AOR_RAD:
                score = rmse(succeeded.true_aor, succeeded.aor)
            elif metric == Metric.RMSE_TOA_S:
                score = rmse(succeeded.true_toa, succeeded.toa)
            else:
                score = rmse(succeeded[['true_x', 'true_y']].values, succeeded[['x', 'y']].values)
            rows.append(dict(sweep_variable=spec.variable.name, sweep_value=format_value(value), solver=solver,
                             metric=Metric(metric).value, value=score, n_trials=spec.n_trials, n_failed=n_failed,
                             seed=spec.seed))
    return rows


def run_sweep(spec, workers=None):
    """
    Run a Monte Carlo sweep and aggregate RMSE per sweep value, solver and metric.

    Trials that raise a RisLocalizationError are excluded from the RMSE and counted in n_failed. A sweep value whose
    scene is invalid counts all of its trials as failed. Every trial draws its random stream from a seed derived from
    (seed, variable, value, trial index), so results do not depend on the number of workers.

    Parameters
    ----------
    spec: SweepSpec
    workers: int or None
        Number of worker processes, RIS_LOCATE_THREADS or the CPU count if None

    Returns
    -------
    ExperimentResult
    """
    workers = workers or n_workers()
    solver_config = spec.base_config.solver
    rows, trial_frames, timings = [], [], {}
    logger.info(f'Sweep over {spec.variable.name}: {len(spec.values)} values, {spec.n_trials} trials, '
                f'solvers {list(spec.solvers)}, {workers} worker(s)')
    for value in spec.values:
        start = time.perf_counter()
        label = format_value(value)
        try:
            scene, arrays, waveform = _configure(spec, value)
        except InvalidSceneError as e:
            logger.warning(f'{spec.variable.name}={label}: invalid scene, all trials failed ({e})')
            records = [dict(trial=k, solver=s, failed=True, error=f'{type(e).__name__}: {e}')
                       for k in range(spec.n_trials) for s in spec.solvers]
        else:
            tasks = [(scene, arrays, waveform, solver_config, spec.solvers,
                      trial_seed(spec.seed, spec.variable.name, value, k), k) for k in range(spec.n_trials)]
            records = [r for trial in _map_trials(tasks, workers, f'{spec.variable.name}={label}') for r in trial]
        trials = pd.DataFrame(records)
        trials.insert(0, 'sweep_value', label)
        for record in trials[trials.failed].itertuples():
            logger.warning(f'{spec.variable.name}={label} trial {record.trial} {record.solver} failed: {record.error}')
        rows.extend(_aggregate(trials, spec, value))
        trial_frames.append(trials)
        timings[label] = time.perf_counter() - start
        logger.info(f'{spec.variable.name}={label} done in {timings[label]:.2f} s')
    return ExperimentResult(table=pd.DataFrame(rows, columns=RESULT_COLUMNS),
                            trials=pd.concat(trial_frames, ignore_index=True), timings=timings)


def placement_lattice(extent=(0.0, 5.0), step=0.5):
    """Square lattice of candidate RIS positions covering [low, high] in both coordinates"""
    axis = np.arange(extent[0], extent[1] + step / 2, step)
    return [(float(x), float(y)) for x in axis for y in axis]


def placement_heatmap(grid, config, n_trials=None, ue_position=None, workers=None):
    """
    Position RMSE of the tmsbl pipeline for every candidate RIS position of a lattice.

    Lattice points that do not form a valid scene (RIS on top of the BS, the UE or a scatterer) are skipped. Cells in
    which every trial fails report NaN with n_failed equal to n_trials.

    Parameters
    ----------
    grid: list of (x, y)
        Candidate RIS positions
    config: RunConfig
    n_trials: int or None
        Trials per cell, config.experiment.n_trials if None
    ue_position: (x, y) or None
        UE position, config.experiment.heatmap_ue if None
    workers: int or None

    Returns
    -------
    ExperimentResult
    """
    ue_position = tuple(ue_position if ue_position is not None else config.experiment.heatmap_ue)
    valid = []
    for point in grid:
        try:
            config.scene.build(ris_position=point, ue_position=ue_position)
        except InvalidSceneError as e:
            logger.info(f'Skipping RIS position {format_value(point)}: {e}')
            continue
        valid.append(tuple(point))
    if not valid:
        raise InvalidSceneError('no lattice point forms a valid scene')
    spec = SweepSpec(variable=SweepVariable.RIS_POSITION, values=valid, solvers=('tmsbl',),
                     n_trials=n_trials or config.experiment.n_trials, base_config=config,
                     seed=config.experiment.seed, metrics=(Metric.RMSE_POSITION_M,), ue_position=ue_position)
    return run_sweep(spec, workers=workers)


def complexity_report(n_ris, n_subcarriers, n_blocks):
    """
    Leading-order complexity of every recovery algorithm, one row per algorithm and (n_ris, n_blocks) pair.

    At the tabulated dimensions the printed reference values are included, and entries whose printed value differs
    from the formula are annotated.

    Parameters
    ----------
    n_ris: int or list of int
        RIS grid sizes N_R
    n_subcarriers: int
    n_blocks: int or list of int
        Stage-2 block counts J

    Returns
    -------
    pd.DataFrame
    """
    rows = []
    for nr, j in itertools.product(np.atleast_1d(n_ris).tolist(), np.atleast_1d(n_blocks).tolist()):
        tabulated = (nr, n_subcarriers, j) == PRINTED_DIMENSIONS
        for algorithm in COMPLEXITY_ALGORITHMS:
            value = flop_estimate(algorithm, nr, n_subcarriers, j)
            printed = PRINTED_COMPLEXITY[algorithm] if tabulated else None
            annotation = ''
            if printed is not None and printed != value:
                annotation = f'printed value {printed} does not match the formula value {value}'
                logger.warning(f'{algorithm}: {annotation}')
            rows.append(dict(algorithm=algorithm, n_ris=nr, n_subcarriers=n_subcarriers, n_blocks=j,
                             formula_value=value, printed_value=printed, annotation=annotation))
    return pd.DataFrame(rows, columns=COMPLEXITY_COLUMNS).astype({'printed_value': 'Int64'})
