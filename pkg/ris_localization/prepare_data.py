import logging
from collections import namedtuple
from dataclasses import dataclass

import numpy as np

from ris_localization.functions.beamspace import dft_dictionary, stage1_operator, stage2_operator
from ris_localization.functions.channel import (
    build_realization,
    cascaded_channel,
    observe_block,
    random_phases,
    steering_vector,
)
from ris_localization.functions.errors import ConfigValueError
from ris_localization.functions.geometry import Segment
from ris_localization.functions.solvers import MmvProblem, SompResult, dcs_somp
from ris_localization.functions.utils import SolverConfig

logger = logging.getLogger('ris_localization')

# energy of the strongest Stage-1 atom relative to noise alone, below which the sounding is repeated
STAGE1_DETECTION_RATIO = 3.0

KnownGeometry = namedtuple('KnownGeometry', ['ris_position', 'phi_br', 'tau_br'])


@dataclass(frozen=True)
class Stage1Result:
    """Beams designed from the Stage-1 sounding, held fixed for all Stage-2 blocks"""
    bs_precoder: np.ndarray
    ue_combiner: np.ndarray
    estimated_aod: tuple
    estimated_aoa: tuple
    selection: SompResult
    phase_vector: np.ndarray
    attempts: int = 1
    detection_ratio: float = np.inf


class Stage2Observations(namedtuple('Stage2Observations', ['problem', 'phase_matrix', 'dominant_pair',
                                                           'observations', 'pair_energy'])):
    """
    problem: MmvProblem of the dominant path pair
    phase_matrix: (J, N_R) RIS configuration of every block
    dominant_pair: (combiner column, precoder column) with the highest observed energy
    observations: (J, N, L_RM, L_BR) all beam-pair observations
    pair_energy: (L_RM, L_BR) observed energy per beam pair
    """


@dataclass(frozen=True)
class TrialData:
    realization: object
    stage1: Stage1Result
    stage2: Stage2Observations
    known: KnownGeometry


def _gaussian_beams(n_elements, n_beams, rng):
    beams = rng.standard_normal((n_elements, n_beams)) + 1j * rng.standard_normal((n_elements, n_beams))
    return beams / np.linalg.norm(beams, axis=0)


def _first_distinct(indices, count):
    distinct = []
    for index in indices:
        if index not in distinct:
            distinct.append(index)
        if len(distinct) == count:
            break
    return distinct


def detection_ratio(observations, operators, index, noise_variance):
    """
    Energy captured by one beamspace atom over all subcarriers, relative to what noise alone would put there.

    The combined noise W^H N is coloured, so the noise energy along atom s is sigma^2 ||W r||^2 / ||r||^2 with r the
    combiner factor of s. Noise alone gives about one for a fixed atom and about two for the strongest of many atoms.
    """
    if noise_variance == 0:
        return np.inf
    captured, noise = 0.0, 0.0
    for y, operator in zip(observations, operators):
        combined = operator.combined
        right = combined.right[:, index % combined.right.shape[1]]
        captured += np.abs(combined.rmatvec(y)[index]) ** 2 / combined.column_norms()[index] ** 2
        noise += np.linalg.norm(operator.phi.right.conj().T @ right) ** 2 / np.linalg.norm(right) ** 2
    return float(captured / (noise_variance * noise))


def _sound(realization, arrays, waveform, rng, n_pairs):
    """One Stage-1 sounding with a fresh random RIS configuration, followed by DCS-SOMP"""
    phase_vector = random_phases(arrays.n_ris, 1, rng, waveform.ris_phase_bits)[0]
    dict_bs = dft_dictionary(arrays.n_bs, arrays.spacing)
    dict_ue = dft_dictionary(arrays.n_ue, arrays.spacing)
    observations, operators = [], []
    for n in range(waveform.n_subcarriers):
        precoder = _gaussian_beams(arrays.n_bs, waveform.n_stage1_symbols, rng)
        combiner = _gaussian_beams(arrays.n_ue, waveform.n_stage1_symbols, rng)
        channel = realization.gain_scale * cascaded_channel(realization, phase_vector, n)
        y = observe_block(channel, precoder, combiner, waveform.transmit_energy, waveform.noise_variance, rng)
        observations.append(y.reshape(-1, order='F'))
        operators.append(stage1_operator(precoder, combiner, dict_bs, dict_ue))
    selection = dcs_somp(observations, operators, n_pairs, arrays.spacing)
    ratio = detection_ratio(observations, operators, selection.indices[0], waveform.noise_variance)
    return selection, phase_vector, ratio


def run_stage1(scene, arrays, waveform, rng, realization=None):
    """
    Sound the channel with random beams, pick beamspace atoms with DCS-SOMP and design the Stage-2 beams.

    Every subcarrier gets its own complex Gaussian precoder and combiner with G unit-norm columns; the RIS keeps one
    random configuration for the whole sounding. DCS-SOMP selects L_BR * L_RM atoms; the precoder steers towards the
    first L_BR distinct BS grid angles and the combiner towards the first L_RM distinct UE grid angles.

    A random RIS configuration can cancel the line-of-sight cascade, and DCS-SOMP then only sees noise. The sounding
    is repeated with a new configuration, up to waveform.stage1_attempts times, while the first selected atom captures
    less than STAGE1_DETECTION_RATIO times the noise energy. The attempt with the strongest first atom is kept.

    Parameters
    ----------
    scene: Scene
    arrays: ArrayConfig
    waveform: WaveformConfig
    rng: np.random.Generator
    realization: ChannelRealization or None
        Channel to sound, synthesized from `rng` if None

    Returns
    -------
    Stage1Result
    """
    if realization is None:
        realization = build_realization(scene, arrays, waveform, rng)
    n_br, n_rm = scene.n_paths(Segment.BS_RIS), scene.n_paths(Segment.RIS_UE)
    n_symbols = waveform.n_stage1_symbols
    if n_symbols <= n_br * n_rm:
        raise ConfigValueError('waveform.n_stage1_symbols',
                               f'{n_symbols} sounding symbols for {n_br * n_rm} path pairs, need more symbols')
    best = None
    for attempt in range(1, waveform.stage1_attempts + 1):
        selection, phase_vector, ratio = _sound(realization, arrays, waveform, rng, n_br * n_rm)
        if best is None or ratio > best[2]:
            best = (selection, phase_vector, ratio)
        if ratio >= STAGE1_DETECTION_RATIO:
            break
        logger.debug(f'Stage 1 attempt {attempt}: strongest atom at {ratio:.2f} x noise, sounding again')
    selection, phase_vector, ratio = best

    dict_bs = dft_dictionary(arrays.n_bs, arrays.spacing)
    dict_ue = dft_dictionary(arrays.n_ue, arrays.spacing)
    bs_indices = _first_distinct(selection.bs_indices, n_br)
    ue_indices = _first_distinct(selection.ue_indices, n_rm)
    aod = tuple(float(dict_bs.angles[i]) for i in bs_indices)
    aoa = tuple(float(dict_ue.angles[i]) for i in ue_indices)
    logger.debug(f'Stage 1 beams: BS grid {bs_indices}, UE grid {ue_indices} after {attempt} attempt(s)')
    return Stage1Result(
        bs_precoder=steering_vector(arrays.n_bs, np.array(aod), arrays.spacing),
        ue_combiner=steering_vector(arrays.n_ue, np.array(aoa), arrays.spacing),
        estimated_aod=aod, estimated_aoa=aoa, selection=selection, phase_vector=phase_vector, attempts=attempt,
        detection_ratio=ratio)


def assemble_stage2(scene, stage1, realization, waveform, rng, solver_config=None):
    """
    Observe J blocks with fixed beams and fresh random RIS phases, then stack the dominant pair into an MMV problem.

    The dominant pair is the (combiner, precoder) entry with the largest energy over all blocks and subcarriers. Its
    observations are divided by sqrt(P), so the noise variance of block t is sigma^2 ||w||^2 / P, bounded below by
    the solver noise floor.

    Parameters
    ----------
    scene: Scene
    stage1: Stage1Result
    realization: ChannelRealization
    waveform: WaveformConfig
    rng: np.random.Generator
    solver_config: SolverConfig or None
        Supplies the iteration limit, tolerance and noise floor of the problem

    Returns
    -------
    Stage2Observations
    """
    solver_config = solver_config or SolverConfig()
    arrays = realization.arrays
    phase_matrix = random_phases(arrays.n_ris, waveform.n_blocks, rng, waveform.ris_phase_bits)
    cascade = realization.gain_scale * realization.cascaded(phase_matrix)
    precoder, combiner = stage1.bs_precoder, stage1.ue_combiner

    observations = np.empty((waveform.n_blocks, waveform.n_subcarriers, combiner.shape[1], precoder.shape[1]),
                            dtype=complex)
    for t in range(waveform.n_blocks):
        for n in range(waveform.n_subcarriers):
            observations[t, n] = observe_block(cascade[t, n], precoder, combiner, waveform.transmit_energy,
                                               waveform.noise_variance, rng)
    pair_energy = np.sum(np.abs(observations) ** 2, axis=(0, 1))
    a, b = np.unravel_index(int(np.argmax(pair_energy)), pair_energy.shape)
    logger.debug(f'Dominant beam pair (combiner {a}, precoder {b}) out of {pair_energy.shape} for '
                 f'{scene.n_paths(Segment.BS_RIS)} x {scene.n_paths(Segment.RIS_UE)} paths')

    noise = waveform.noise_variance * np.linalg.norm(combiner[:, a]) ** 2 / waveform.transmit_energy
    noise_cov_diag = np.full(waveform.n_blocks, max(noise, solver_config.noise_floor))
    psi = stage2_operator(phase_matrix, dft_dictionary(arrays.n_ris, arrays.spacing), waveform.n_subcarriers).psi
    problem = MmvProblem(
        observations=observations[:, :, a, b] / np.sqrt(waveform.transmit_energy), sensing=psi,
        noise_cov_diag=noise_cov_diag, max_iterations=solver_config.max_iterations,
        convergence_tol=solver_config.convergence_tol)
    return Stage2Observations(problem=problem, phase_matrix=phase_matrix, dominant_pair=(int(a), int(b)),
                              observations=observations, pair_energy=pair_energy)


def known_geometry(scene, stage1, precoder_column, paths_br):
    """
    Pre-measured BS -> RIS quantities for a precoder beam: the BS -> RIS path whose departure angle is closest in
    sine to the beam gives the angle of arrival at the RIS and the BS -> RIS delay.
    """
    beam = np.sin(stage1.estimated_aod[precoder_column])
    path = min(paths_br, key=lambda p: abs(np.sin(p.departure_angle) - beam))
    return KnownGeometry(ris_position=scene.ris_position, phi_br=path.arrival_angle, tau_br=path.toa)


def prepare_trial(scene, arrays, waveform, rng, solver_config=None):
    """
    Draw a channel realization and run both sounding stages of one Monte Carlo trial.

    Returns
    -------
    TrialData
    """
    realization = build_realization(scene, arrays, waveform, rng)
    stage1 = run_stage1(scene, arrays, waveform, rng, realization=realization)
    stage2 = assemble_stage2(scene, stage1, realization, waveform, rng, solver_config=solver_config)
    known = known_geometry(scene, stage1, stage2.dominant_pair[1], realization.paths_br)
    return TrialData(realization=realization, stage1=stage1, stage2=stage2, known=known)
