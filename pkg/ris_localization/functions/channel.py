import logging
from dataclasses import dataclass, replace

import numpy as np

from ris_localization.functions.errors import (
    ConfigValueError,
    InvalidRISConfigurationError,
    InvalidSceneError,
    RisLocalizationError,
    ShapeMismatchError,
    SpatialFrequencyOverflowError,
)
from ris_localization.functions.geometry import SPEED_OF_LIGHT, Segment, scene_paths

logger = logging.getLogger('ris_localization')

UNIT_MODULUS_TOLERANCE = 1e-12


@dataclass(frozen=True)
class ArrayConfig:
    n_bs: int = 8
    n_ue: int = 8
    n_ris: int = 8
    element_spacing_over_wavelength: float = 0.5

    def __post_init__(self):
        for name in ['n_bs', 'n_ue', 'n_ris']:
            if int(getattr(self, name)) < 2:
                raise ConfigValueError(f'arrays.{name}', f'needs at least 2 elements, got {getattr(self, name)}')
        if not self.element_spacing_over_wavelength > 0:
            raise ConfigValueError('arrays.element_spacing_over_wavelength', 'must be positive')

    @property
    def spacing(self):
        return self.element_spacing_over_wavelength

    def segment_sizes(self, segment):
        """(transmit elements, receive elements) of a segment"""
        if Segment(segment) == Segment.BS_RIS:
            return self.n_bs, self.n_ris
        return self.n_ris, self.n_ue

    def with_elements(self, n_elements):
        return replace(self, n_bs=n_elements, n_ue=n_elements, n_ris=n_elements)


@dataclass(frozen=True)
class WaveformConfig:
    """
    OFDM waveform and link budget of one simulation run.

    Only one noise level is carried here; sweeps over the SNR build one WaveformConfig per value with `with_snr`.
    """
    carrier_hz: float = 60e9
    bandwidth_hz: float = 100e6
    n_subcarriers: int = 10
    n_blocks: int = 64
    n_stage1_symbols: int = 32
    transmit_energy: float = 1.0
    noise_variance: float = 1.0
    reflection_loss_db: float = -13.0
    normalize_gain: bool = True
    ris_phase_bits: int = None
    gain_reference_elements: int = 8
    stage1_attempts: int = 6

    def __post_init__(self):
        if not self.carrier_hz > 0 or not self.bandwidth_hz > 0:
            raise ConfigValueError('waveform.carrier_hz', 'carrier and bandwidth must be positive')
        if self.bandwidth_hz / self.carrier_hz >= 0.05:
            raise ConfigValueError(
                'waveform.bandwidth_hz',
                f'narrowband model needs bandwidth/carrier < 0.05, got {self.bandwidth_hz / self.carrier_hz:.4g}')
        for name in ['n_subcarriers', 'n_blocks', 'n_stage1_symbols']:
            if int(getattr(self, name)) < 1:
                raise ConfigValueError(f'waveform.{name}', f'must be at least 1, got {getattr(self, name)}')
        if not self.transmit_energy > 0:
            raise ConfigValueError('waveform.transmit_energy', 'must be positive')
        if self.noise_variance < 0:
            raise ConfigValueError('waveform.noise_variance', 'must be non-negative')
        if self.ris_phase_bits is not None and int(self.ris_phase_bits) < 1:
            raise ConfigValueError('waveform.ris_phase_bits', 'must be null or at least 1')
        if int(self.gain_reference_elements) < 2:
            raise ConfigValueError('waveform.gain_reference_elements', 'needs at least 2 elements')
        if int(self.stage1_attempts) < 1:
            raise ConfigValueError('waveform.stage1_attempts', 'must be at least 1')

    @property
    def wavelength(self):
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def sampling_period_s(self):
        return 1 / self.bandwidth_hz

    @property
    def snr_db(self):
        if self.noise_variance == 0:
            return np.inf
        return 10 * np.log10(self.transmit_energy / self.noise_variance)

    def with_snr(self, snr_db):
        noise_variance = 0.0 if np.isinf(snr_db) else self.transmit_energy / 10 ** (snr_db / 10)
        return replace(self, noise_variance=noise_variance)

    def phase_ramp(self, toa, n):
        """Per-subcarrier delay phase exp(-j2pi n tau / (N Ts)), broadcast over `toa`"""
        return np.exp(-2j * np.pi * n * np.asarray(toa) / (self.n_subcarriers * self.sampling_period_s))


@dataclass(frozen=True)
class PathGains:
    segment: Segment
    fading: np.ndarray
    path_loss: np.ndarray
    toa: np.ndarray

    def __post_init__(self):
        for name in ['fading', 'path_loss', 'toa']:
            value = np.atleast_1d(np.asarray(getattr(self, name)))
            value.flags.writeable = False
            object.__setattr__(self, name, value)
        if not self.fading.shape == self.path_loss.shape == self.toa.shape:
            raise ShapeMismatchError(
                f'fading, path_loss and toa must describe the same paths, got shapes {self.fading.shape}, '
                f'{self.path_loss.shape} and {self.toa.shape}')

    @property
    def n_paths(self):
        return self.fading.size


@dataclass(frozen=True)
class ChannelRealization:
    """
    Frequency-domain channels of one Monte Carlo realization.

    h_br has shape (N, N_R, N_B) and h_rm shape (N, N_M, N_R). gain_scale is the common factor applied to the cascade
    before observation (1 unless the waveform asks for gain normalization).
    """
    h_br: np.ndarray
    h_rm: np.ndarray
    gains_br: PathGains
    gains_rm: PathGains
    paths_br: tuple
    paths_rm: tuple
    arrays: ArrayConfig
    waveform: WaveformConfig
    gain_scale: float = 1.0

    def cascaded(self, phase_matrix):
        """Cascaded channel for every block and subcarrier, shape (J, N, N_M, N_B)"""
        phase_matrix = np.atleast_2d(phase_matrix)
        check_unit_modulus(phase_matrix)
        return np.einsum('nmr,tr,nrb->tnmb', self.h_rm, phase_matrix, self.h_br)


def steering_vector(n_elements, angle, spacing_ratio=0.5):
    """
    Unit-norm ULA response, a_k = exp(-j2pi (d/lambda) sin(angle) k) / sqrt(N), k = 0..N-1.

    Parameters
    ----------
    n_elements: int
    angle: float or array-like
        Angle(s) in radians measured from the global +x axis. For an array of angles, one column per angle is
        returned.
    spacing_ratio: float
        Element spacing over wavelength

    Returns
    -------
    np.ndarray
        (n_elements,) for a scalar angle, (n_elements, n_angles) otherwise
    """
    return spatial_steering(n_elements, spacing_ratio * np.sin(angle))


def spatial_steering(n_elements, frequency):
    """Steering vector(s) parameterised directly by the spatial frequency (d/lambda) sin(angle)"""
    k = np.arange(n_elements)
    frequency = np.asarray(frequency, dtype=float)
    if frequency.ndim == 0:
        return np.exp(-2j * np.pi * frequency * k) / np.sqrt(n_elements)
    return np.exp(-2j * np.pi * np.outer(k, frequency)) / np.sqrt(n_elements)


def path_loss(distance, is_los, reflection_loss_db, wavelength):
    """
    Free-space amplitude loss lambda / (4 pi d), scaled by sqrt of the linear reflection loss for NLoS paths.

    Parameters
    ----------
    distance: float
        Path length in meters, must be positive
    is_los: bool
    reflection_loss_db: float
        Reflection loss in dB, e.g. -13
    wavelength: float
        Carrier wavelength in meters

    Returns
    -------
    float
    """
    if not distance > 0:
        raise InvalidSceneError(f'path length must be positive, got {distance}')
    rho = wavelength / (4 * np.pi * distance)
    if not is_los:
        rho *= 10 ** (reflection_loss_db / 20)
    return float(rho)


def draw_path_gains(paths, waveform, rng):
    """
    Path gains of one segment for one trial: deterministic unit fading for the line-of-sight path and unit-variance
    circularly symmetric complex Gaussian fading for every scattered path.
    """
    n_paths = len(paths)
    fading = np.ones(n_paths, dtype=complex)
    if n_paths > 1:
        fading[1:] = (rng.standard_normal(n_paths - 1) + 1j * rng.standard_normal(n_paths - 1)) / np.sqrt(2)
    rho = np.array([path_loss(p.distance, p.is_los, waveform.reflection_loss_db, waveform.wavelength)
                    for p in paths])
    return PathGains(segment=paths[0].segment, fading=fading, path_loss=rho, toa=np.array([p.toa for p in paths]))


def _segment_steering(paths, arrays):
    n_tx, n_rx = arrays.segment_sizes(paths[0].segment)
    a_tx = steering_vector(n_tx, np.array([p.departure_angle for p in paths]), arrays.spacing)
    a_rx = steering_vector(n_rx, np.array([p.arrival_angle for p in paths]), arrays.spacing)
    return a_tx, a_rx


def effective_gains(gains, arrays, waveform, n):
    """Diagonal of the path-gain matrix of a segment at subcarrier n, array gain included"""
    n_tx, n_rx = arrays.segment_sizes(gains.segment)
    return np.sqrt(n_tx * n_rx) * gains.fading * gains.path_loss * waveform.phase_ramp(gains.toa, n)


def segment_channel(geometry, gains, arrays, waveform, n):
    """
    Channel matrix of one segment at subcarrier n, H[n] = A_rx diag(sigma[n]) A_tx^H.

    Parameters
    ----------
    geometry: list of PathGeometry
        Paths of the segment, in the same order as the gains
    gains: PathGains
    arrays: ArrayConfig
    waveform: WaveformConfig
    n: int
        Subcarrier index in [0, N - 1]

    Returns
    -------
    np.ndarray
        (receive elements, transmit elements)
    """
    if not 0 <= n < waveform.n_subcarriers:
        raise ShapeMismatchError(f'subcarrier {n} outside [0, {waveform.n_subcarriers - 1}]')
    if len(geometry) != gains.n_paths:
        raise ShapeMismatchError(f'{len(geometry)} paths in the geometry but {gains.n_paths} gains')
    a_tx, a_rx = _segment_steering(geometry, arrays)
    return (a_rx * effective_gains(gains, arrays, waveform, n)) @ a_tx.conj().T


def check_unit_modulus(phases):
    phases = np.asarray(phases)
    deviation = np.max(np.abs(np.abs(phases) - 1)) if phases.size else 0
    if deviation > UNIT_MODULUS_TOLERANCE:
        raise InvalidRISConfigurationError(
            f'RIS phase entries must have unit modulus, largest deviation is {deviation:.3g}')


def cascaded_channel(realization, phase_vector, n):
    """
    BS -> RIS -> UE channel at subcarrier n for one RIS configuration, H_RM[n] diag(phase_vector) H_BR[n].

    The RIS reflects perfectly, so every entry of `phase_vector` must have unit modulus.
    """
    phase_vector = np.asarray(phase_vector)
    check_unit_modulus(phase_vector)
    if phase_vector.shape != (realization.arrays.n_ris,):
        raise ShapeMismatchError(
            f'phase vector needs {realization.arrays.n_ris} entries, got shape {phase_vector.shape}')
    return (realization.h_rm[n] * phase_vector) @ realization.h_br[n]


def effective_channel(gains_br, gains_rm, paths_br, paths_rm, phase_vector, n, arrays, waveform):
    """
    Low-dimensional channel between the BS paths and the UE paths as seen through the RIS.

    Entry (a, b) is rho_RM,a rho_BR,b phase_vector^T a(theta_diff) / sqrt(N_R), where theta_diff has the spatial
    frequency sin(phi_BR,b) - sin(theta_RM,a) and rho includes the array gain of each segment.

    Returns
    -------
    np.ndarray
        (L_RM, L_BR)

    Raises
    ------
    SpatialFrequencyOverflowError
        if |sin(phi_BR,b) - sin(theta_RM,a)| > 1 for a path pair
    """
    phase_vector = np.asarray(phase_vector)
    check_unit_modulus(phase_vector)
    sin_phi_br = np.sin([p.arrival_angle for p in paths_br])
    sin_theta_rm = np.sin([p.departure_angle for p in paths_rm])
    sin_diff = sin_phi_br[np.newaxis, :] - sin_theta_rm[:, np.newaxis]
    if np.any(np.abs(sin_diff) > 1):
        raise SpatialFrequencyOverflowError(
            f'|sin(phi_BR) - sin(theta_RM)| reaches {np.max(np.abs(sin_diff)):.4f} > 1, the difference angle is '
            f'undefined')
    n_ris = arrays.n_ris
    response = spatial_steering(n_ris, arrays.spacing * sin_diff.ravel())
    inner = (phase_vector @ response).reshape(sin_diff.shape) / np.sqrt(n_ris)
    rho_br = effective_gains(gains_br, arrays, waveform, n)
    rho_rm = effective_gains(gains_rm, arrays, waveform, n)
    return rho_rm[:, np.newaxis] * inner * rho_br[np.newaxis, :]


def observe_block(channel, precoder, combiner, transmit_energy, noise_variance, rng):
    """
    Combined received signal Y = sqrt(P) W^H H F + W^H N for one block.

    Parameters
    ----------
    channel: np.ndarray
        (receive elements, transmit elements)
    precoder: np.ndarray
        (transmit elements, symbols or beams)
    combiner: np.ndarray
        (receive elements, combining beams)
    transmit_energy: float
    noise_variance: float
        Variance of each noise entry before combining
    rng: np.random.Generator

    Returns
    -------
    np.ndarray
        (combiner columns, precoder columns)
    """
    if noise_variance < 0:
        raise RisLocalizationError(f'noise variance must be non-negative, got {noise_variance}')
    channel, precoder, combiner = np.asarray(channel), np.asarray(precoder), np.asarray(combiner)
    if channel.shape[1] != precoder.shape[0] or channel.shape[0] != combiner.shape[0]:
        raise ShapeMismatchError(
            f'cannot combine channel {channel.shape} with precoder {precoder.shape} and combiner {combiner.shape}')
    y = np.sqrt(transmit_energy) * combiner.conj().T @ channel @ precoder
    if noise_variance > 0:
        shape = (channel.shape[0], precoder.shape[1])
        noise = np.sqrt(noise_variance / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
        y = y + combiner.conj().T @ noise
    return y


def random_phases(n_ris, n_blocks, rng, bits=None):
    """
    Random RIS configurations, one unit-modulus row per block, phases uniform in [0, 2pi).

    With `bits`, phases are rounded to the nearest of 2**bits levels.
    """
    angles = rng.uniform(0, 2 * np.pi, size=(n_blocks, n_ris))
    if bits is not None:
        angles = quantize_phases(angles, bits)
    return np.exp(1j * angles)


def quantize_phases(angles, bits):
    step = 2 * np.pi / 2 ** int(bits)
    return np.mod(np.round(np.asarray(angles) / step) * step, 2 * np.pi)


def gain_normalization(gains_br, gains_rm, reference_elements=8):
    """
    Scale removing the line-of-sight path loss of both segments and the array gain of a reference array size.

    With `reference_elements` elements at the BS, the RIS and the UE, the noiseless line-of-sight pair of the
    effective channel has unit power on average. Larger arrays keep the extra gain N_B N_M N_R / reference**3.
    """
    return 1.0 / (gains_br.path_loss[0] * gains_rm.path_loss[0] * float(reference_elements) ** 1.5)


def build_realization(scene, arrays, waveform, rng=None, gains_br=None, gains_rm=None):
    """
    Synthesize the segment channels of a scene for all subcarriers.

    Gains are drawn from `rng` unless both are given, which allows rebuilding a stored realization exactly.

    Returns
    -------
    ChannelRealization
    """
    paths_br = tuple(scene_paths(scene, Segment.BS_RIS))
    paths_rm = tuple(scene_paths(scene, Segment.RIS_UE))
    if gains_br is None or gains_rm is None:
        if rng is None:
            raise RisLocalizationError('a random generator is needed to draw path gains')
        gains_br = draw_path_gains(paths_br, waveform, rng)
        gains_rm = draw_path_gains(paths_rm, waveform, rng)
    h_br = np.stack([segment_channel(paths_br, gains_br, arrays, waveform, n) for n in range(waveform.n_subcarriers)])
    h_rm = np.stack([segment_channel(paths_rm, gains_rm, arrays, waveform, n) for n in range(waveform.n_subcarriers)])
    gain_scale = 1.0
    if waveform.normalize_gain:
        gain_scale = gain_normalization(gains_br, gains_rm, waveform.gain_reference_elements)
    return ChannelRealization(h_br=h_br, h_rm=h_rm, gains_br=gains_br, gains_rm=gains_rm, paths_br=paths_br,
                              paths_rm=paths_rm, arrays=arrays, waveform=waveform, gain_scale=float(gain_scale))
