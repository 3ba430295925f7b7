import logging
from dataclasses import dataclass

import numpy as np
from scipy.fft import ifft

from ris_localization.functions.beamspace import dft_dictionary, grid_to_angle
from ris_localization.functions.errors import AmbiguousGeometryError, InvalidDelayError
from ris_localization.functions.geometry import recover_position
from ris_localization.functions.solvers import (
    amp_mmv,
    gsbl,
    omp_per_subcarrier,
    sbl_per_subcarrier,
    somp_mmv,
    tmsbl,
)
from ris_localization.functions.utils import check_config

# Set up logger
logger = logging.getLogger('ris_localization')
# Load and check configuration file
config = check_config()

SOLVERS = {
    'dcs_somp': lambda problem, solver_config: somp_mmv(problem, n_atoms=solver_config.omp_atoms),
    'omp': lambda problem, solver_config: omp_per_subcarrier(problem, n_atoms=solver_config.omp_atoms),
    'sbl': lambda problem, solver_config: sbl_per_subcarrier(problem),
    'gsbl': lambda problem, solver_config: gsbl(problem),
    'tmsbl': lambda problem, solver_config: tmsbl(problem, kappa=solver_config.kappa),
    'amp': lambda problem, solver_config: amp_mmv(problem, damping=solver_config.amp_damping,
                                                  iterations=solver_config.amp_iterations,
                                                  alpha=solver_config.amp_alpha),
}


@dataclass(frozen=True)
class LocalizationEstimate:
    aor: float
    toa_cascade: float
    toa_ris_ue: float
    position: np.ndarray
    dominant_path: int
    per_subcarrier_gain: np.ndarray
    grid_row: int
    delay_clamped: bool
    solver: str
    iterations_used: int
    converged: bool


def fit_solver(solver, problem, solver_config=None):
    """
    Run one Stage-2 recovery algorithm.

    Parameters
    ----------
    solver: str
        One of dcs_somp, omp, sbl, gsbl, tmsbl, amp
    problem: MmvProblem
    solver_config: SolverConfig or None
        Algorithm settings, the packaged defaults if None

    Returns
    -------
    SparseEstimate
    """
    if solver not in SOLVERS:
        raise ValueError(f'Unknown solver {solver}, options are {list(SOLVERS)}')
    return SOLVERS[solver](problem, solver_config or config.solver)


def extract_aor(estimate, known_aoa_ris, dict_ris):
    """
    Angle of reflection from the dominant row of the recovered beamspace channel.

    The row with the largest energy across subcarriers gives the difference angle theta_diff on the RIS grid, and
    sin(theta_RM) = sin(phi_BR) - sin(theta_diff).

    Parameters
    ----------
    estimate: SparseEstimate
    known_aoa_ris: float
        Angle of arrival phi_BR at the RIS of the BS -> RIS path, radians
    dict_ris: DftDictionary

    Returns
    -------
    float
        theta_RM in radians, in [-pi/2, pi/2]
    """
    row = estimate.dominant_row()
    theta_diff = grid_to_angle(row, dict_ris.n, dict_ris.spacing_ratio)
    argument = np.sin(known_aoa_ris) - np.sin(theta_diff)
    if abs(argument) > 1:
        raise AmbiguousGeometryError(
            f'sin(phi_BR) - sin(theta_diff) = {argument:.4f} for grid row {row}, the reflection angle is ambiguous')
    return float(np.arcsin(argument))


def extract_toa(per_subcarrier_gain, waveform, grid_resolution):
    """
    Cascade delay maximizing the matched correlation |sum_n rho_n exp(j2pi n tau / (N Ts))|^2.

    Candidates are grid_resolution points spread uniformly over [0, N Ts); the correlation over the whole grid is one
    zero-padded inverse FFT. Ties go to the smallest delay.

    Parameters
    ----------
    per_subcarrier_gain: np.ndarray
        (N,) complex gains of the dominant row
    waveform: WaveformConfig
    grid_resolution: int
        Number of delay candidates, at least N

    Returns
    -------
    float
        Delay in seconds
    """
    rho = np.asarray(per_subcarrier_gain, dtype=complex)
    n_sub = waveform.n_subcarriers
    if rho.shape != (n_sub,):
        raise ValueError(f'expected {n_sub} subcarrier gains, got shape {rho.shape}')
    if grid_resolution < n_sub:
        raise ValueError(f'delay grid needs at least {n_sub} points, got {grid_resolution}')
    if not np.any(rho):
        raise InvalidDelayError('all subcarrier gains are zero, the delay is undefined')
    correlation = np.abs(ifft(rho, n=grid_resolution) * grid_resolution) ** 2
    return float(np.argmax(correlation) * n_sub * waveform.sampling_period_s / grid_resolution)


def remaining_delay(tau_br, toa_cascade):
    """RIS -> UE delay after removing the BS -> RIS delay, clamped at zero; returns (delay, clamped)"""
    toa_rm = toa_cascade - tau_br
    if toa_rm < 0:
        logger.debug(f'Cascade delay {toa_cascade:.4e} s below the BS -> RIS delay {tau_br:.4e} s, clamped to 0')
        return 0.0, True
    return float(toa_rm), False


def localize(known, aor, toa_cascade):
    """
    UE position from the angle of reflection and the cascade delay.

    Parameters
    ----------
    known: KnownGeometry
        RIS position, BS -> RIS angle of arrival and delay
    aor: float
    toa_cascade: float

    Returns
    -------
    np.ndarray
    """
    toa_rm, _ = remaining_delay(known.tau_br, toa_cascade)
    return recover_position(known.ris_position, aor, toa_rm)


def fit_trial(trial, solver, solver_config=None):
    """
    Recover the Stage-2 channel of a prepared trial with one solver and turn it into a position estimate.

    Parameters
    ----------
    trial: TrialData
    solver: str
    solver_config: SolverConfig or None

    Returns
    -------
    LocalizationEstimate
    """
    solver_config = solver_config or config.solver
    arrays, waveform = trial.realization.arrays, trial.realization.waveform
    estimate = fit_solver(solver, trial.stage2.problem, solver_config)
    dict_ris = dft_dictionary(arrays.n_ris, arrays.spacing)
    aor = extract_aor(estimate, trial.known.phi_br, dict_ris)
    row = estimate.dominant_row()
    gain = estimate.channel_matrix[row]
    toa_cascade = extract_toa(gain, waveform, solver_config.toa_resolution(waveform.n_subcarriers))
    toa_rm, clamped = remaining_delay(trial.known.tau_br, toa_cascade)
    a, b = trial.stage2.dominant_pair
    return LocalizationEstimate(
        aor=aor, toa_cascade=toa_cascade, toa_ris_ue=toa_rm,
        position=recover_position(trial.known.ris_position, aor, toa_rm),
        dominant_path=int(a * trial.stage1.bs_precoder.shape[1] + b), per_subcarrier_gain=gain, grid_row=row,
        delay_clamped=clamped, solver=solver, iterations_used=estimate.iterations_used,
        converged=estimate.converged)
