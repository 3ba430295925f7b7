import unittest

import numpy as np

from ris_localization.functions.channel import (
    ArrayConfig,
    WaveformConfig,
    build_realization,
    cascaded_channel,
    check_unit_modulus,
    draw_path_gains,
    effective_channel,
    gain_normalization,
    observe_block,
    path_loss,
    quantize_phases,
    random_phases,
    steering_vector,
)
from ris_localization.functions.errors import (
    ConfigValueError,
    InvalidRISConfigurationError,
    InvalidSceneError,
    SpatialFrequencyOverflowError,
)
from ris_localization.functions.geometry import Scene, Segment, scene_paths


class TestSteering(unittest.TestCase):

    def test_unit_norm(self):
        for angle in [-1.2, 0.0, 0.4, np.pi / 2]:
            a = steering_vector(8, angle)
            self.assertAlmostEqual(np.linalg.norm(a), 1.0, places=12)
            self.assertAlmostEqual(a[0], 1 / np.sqrt(8), places=12)

    def test_phase_progression(self):
        a = steering_vector(4, np.pi / 6, spacing_ratio=0.5)
        np.testing.assert_allclose(a, np.exp(-1j * np.pi * 0.5 * np.arange(4)) / 2, atol=1e-12)

    def test_columns(self):
        angles = np.array([0.1, -0.3, 0.7])
        matrix = steering_vector(8, angles)
        self.assertEqual(matrix.shape, (8, 3))
        np.testing.assert_allclose(matrix[:, 1], steering_vector(8, -0.3))


class TestConfigObjects(unittest.TestCase):

    def test_waveform_defaults(self):
        waveform = WaveformConfig()
        self.assertAlmostEqual(waveform.sampling_period_s, 1e-8)
        self.assertAlmostEqual(waveform.wavelength, 2.99792e8 / 60e9)
        self.assertAlmostEqual(waveform.snr_db, 0.0)

    def test_narrowband_limit(self):
        with self.assertRaises(ConfigValueError):
            WaveformConfig(carrier_hz=1e9, bandwidth_hz=100e6)

    def test_sounding_settings(self):
        with self.assertRaises(ConfigValueError):
            WaveformConfig(stage1_attempts=0)
        with self.assertRaises(ConfigValueError):
            WaveformConfig(gain_reference_elements=1)

    def test_with_snr(self):
        waveform = WaveformConfig(transmit_energy=2.0)
        self.assertAlmostEqual(waveform.with_snr(10).noise_variance, 0.2)
        self.assertEqual(waveform.with_snr(np.inf).noise_variance, 0.0)
        self.assertEqual(waveform.with_snr(np.inf).snr_db, np.inf)

    def test_array_sizes(self):
        with self.assertRaises(ConfigValueError):
            ArrayConfig(n_ris=1)
        arrays = ArrayConfig().with_elements(16)
        self.assertEqual((arrays.n_bs, arrays.n_ue, arrays.n_ris), (16, 16, 16))
        self.assertEqual(arrays.segment_sizes(Segment.RIS_UE), (16, 16))


class TestPathLoss(unittest.TestCase):

    def test_los_and_reflection(self):
        wavelength = 2.99792e8 / 60e9
        los = path_loss(5.0, True, -13.0, wavelength)
        self.assertAlmostEqual(los, wavelength / (4 * np.pi * 5.0), places=15)
        nlos = path_loss(5.0, False, -13.0, wavelength)
        self.assertAlmostEqual(nlos / los, 10 ** (-13 / 20), places=12)

    def test_zero_distance(self):
        with self.assertRaises(InvalidSceneError):
            path_loss(0.0, True, -13.0, 0.005)

    def test_los_fading_is_deterministic(self):
        scene = Scene(bs_position=[0, 0], ris_position=[2.5, 4], ue_position=[5, 3], scatterers_br=[[1, 3]])
        gains = draw_path_gains(scene_paths(scene, Segment.BS_RIS), WaveformConfig(), np.random.default_rng(0))
        self.assertEqual(gains.fading[0], 1)
        self.assertEqual(gains.n_paths, 2)


class TestCascadedChannel(unittest.TestCase):

    def setUp(self) -> None:
        self.arrays = ArrayConfig()
        self.waveform = WaveformConfig()
        self.rng = np.random.default_rng(42)
        self.scene = Scene(bs_position=[0, 0], ris_position=[2.5, 4], ue_position=[5, 3])
        self.realization = build_realization(self.scene, self.arrays, self.waveform, self.rng)

    def test_shapes(self):
        self.assertEqual(self.realization.h_br.shape, (10, 8, 8))
        self.assertEqual(self.realization.h_rm.shape, (10, 8, 8))
        phases = random_phases(8, 3, self.rng)
        cascade = self.realization.cascaded(phases)
        self.assertEqual(cascade.shape, (3, 10, 8, 8))
        np.testing.assert_allclose(cascade[2, 4], cascaded_channel(self.realization, phases[2], 4), atol=1e-20)

    def test_effective_channel_matches_beamformed_cascade(self):
        realization = self.realization
        phase = random_phases(8, 1, self.rng)[0]
        precoder = steering_vector(8, realization.paths_br[0].departure_angle)
        combiner = steering_vector(8, realization.paths_rm[0].arrival_angle)
        for n in [0, 3, 9]:
            observed = combiner.conj() @ cascaded_channel(realization, phase, n) @ precoder
            effective = effective_channel(realization.gains_br, realization.gains_rm, realization.paths_br,
                                          realization.paths_rm, phase, n, self.arrays, self.waveform)
            self.assertEqual(effective.shape, (1, 1))
            np.testing.assert_allclose(effective[0, 0], observed, rtol=1e-9)

    def test_normalized_gain(self):
        realization = self.realization
        energies = []
        for phase in random_phases(8, 2000, self.rng):
            effective = effective_channel(realization.gains_br, realization.gains_rm, realization.paths_br,
                                          realization.paths_rm, phase, 0, self.arrays, self.waveform)
            energies.append(np.abs(realization.gain_scale * effective[0, 0]) ** 2)
        self.assertAlmostEqual(np.mean(energies), 1.0, delta=0.15)

    def test_normalized_gain_keeps_array_gain(self):
        arrays = ArrayConfig().with_elements(16)
        realization = build_realization(self.scene, arrays, self.waveform, self.rng)
        energies = []
        for phase in random_phases(16, 2000, self.rng):
            effective = effective_channel(realization.gains_br, realization.gains_rm, realization.paths_br,
                                          realization.paths_rm, phase, 0, arrays, self.waveform)
            energies.append(np.abs(realization.gain_scale * effective[0, 0]) ** 2)
        # 16^3 / 8^3 more power than the reference arrays
        self.assertAlmostEqual(np.mean(energies), 8.0, delta=1.0)

    def test_gain_reference(self):
        gains_br, gains_rm = self.realization.gains_br, self.realization.gains_rm
        self.assertAlmostEqual(gain_normalization(gains_br, gains_rm, 16) / gain_normalization(gains_br, gains_rm, 8),
                               0.5 ** 1.5, places=12)
        self.assertEqual(build_realization(self.scene, self.arrays, WaveformConfig(normalize_gain=False),
                                           self.rng).gain_scale, 1.0)

    def test_spatial_frequency_overflow(self):
        scene = Scene(bs_position=[0, -5], ris_position=[0, 0], ue_position=[1, 1])
        realization = build_realization(scene, self.arrays, self.waveform, self.rng)
        with self.assertRaises(SpatialFrequencyOverflowError):
            effective_channel(realization.gains_br, realization.gains_rm, realization.paths_br, realization.paths_rm,
                              np.ones(8), 0, self.arrays, self.waveform)

    def test_unit_modulus(self):
        phase = np.ones(8, dtype=complex)
        phase[3] = 0.5
        with self.assertRaises(InvalidRISConfigurationError):
            cascaded_channel(self.realization, phase, 0)
        with self.assertRaises(InvalidRISConfigurationError):
            check_unit_modulus(phase)


class TestObservation(unittest.TestCase):

    def test_noiseless_block(self):
        rng = np.random.default_rng(3)
        channel = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
        precoder = rng.standard_normal((8, 4)) + 0j
        combiner = rng.standard_normal((8, 2)) + 0j
        y = observe_block(channel, precoder, combiner, 4.0, 0.0, rng)
        np.testing.assert_allclose(y, 2 * combiner.conj().T @ channel @ precoder)

    def test_noise_variance(self):
        rng = np.random.default_rng(5)
        combiner = np.eye(4)[:, :1]
        samples = observe_block(np.zeros((4, 4)), np.eye(4, 5000), combiner, 1.0, 0.5, rng)
        self.assertEqual(samples.shape, (1, 5000))
        self.assertAlmostEqual(np.mean(np.abs(samples) ** 2), 0.5, delta=0.05)

    def test_phase_quantization(self):
        phases = random_phases(8, 20, np.random.default_rng(0), bits=1)
        np.testing.assert_allclose(np.abs(phases), 1)
        self.assertTrue(np.all(np.isclose(phases, 1) | np.isclose(phases, -1)))
        np.testing.assert_allclose(quantize_phases([0.1, np.pi - 0.1, 2 * np.pi - 0.1], 2),
                                   [0, np.pi, 0], atol=1e-12)


if __name__ == '__main__':
    unittest.main()
