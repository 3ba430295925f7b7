import unittest

import numpy as np

from ris_localization.functions.errors import InvalidDelayError, InvalidPathError, InvalidSceneError
from ris_localization.functions.geometry import (
    SPEED_OF_LIGHT,
    Scene,
    Segment,
    path_angles,
    path_distance,
    path_geometry,
    recover_position,
    scene_paths,
)


class TestPathGeometry(unittest.TestCase):

    def setUp(self) -> None:
        self.scene = Scene(bs_position=[0, 0], ris_position=[2.5, 4], ue_position=[5, 3], scatterers_br=[[1, 3]],
                           scatterers_rm=[[4, 2]])

    def test_distances(self):
        self.assertAlmostEqual(path_distance(self.scene, Segment.BS_RIS, 0), np.hypot(2.5, 4), places=12)
        self.assertAlmostEqual(path_distance(self.scene, Segment.BS_RIS, 1), np.hypot(1, 3) + np.hypot(1.5, 1),
                               places=12)
        self.assertAlmostEqual(path_distance(self.scene, 'RIS_UE', 0), np.hypot(2.5, 1), places=12)
        self.assertAlmostEqual(path_distance(self.scene, 'RIS_UE', 1), np.hypot(1.5, 2) + np.hypot(1, 1), places=12)

    def test_angles(self):
        departure, arrival = path_angles(self.scene, Segment.BS_RIS, 0)
        self.assertAlmostEqual(departure, np.arctan2(4, 2.5), places=12)
        # arrival angles point from the receiving array back towards the transmitter
        self.assertAlmostEqual(arrival, np.arctan2(-4, -2.5), places=12)
        departure, arrival = path_angles(self.scene, Segment.RIS_UE, 1)
        self.assertAlmostEqual(departure, np.arctan2(-2, 1.5), places=12)
        self.assertAlmostEqual(arrival, np.arctan2(-1, -1), places=12)

    def test_default_scene_difference_frequency(self):
        phi_br = path_geometry(self.scene, Segment.BS_RIS, 0).arrival_angle
        theta_rm = path_geometry(self.scene, Segment.RIS_UE, 0).departure_angle
        self.assertAlmostEqual(np.sin(phi_br) - np.sin(theta_rm), -0.477, delta=1e-3)

    def test_path_geometry(self):
        paths = scene_paths(self.scene, Segment.RIS_UE)
        self.assertEqual(len(paths), 2)
        self.assertTrue(paths[0].is_los)
        self.assertFalse(paths[1].is_los)
        self.assertAlmostEqual(paths[1].toa, paths[1].distance / SPEED_OF_LIGHT, places=20)

    def test_invalid_path_index(self):
        with self.assertRaises(InvalidPathError):
            path_distance(self.scene, Segment.BS_RIS, 2)
        with self.assertRaises(InvalidPathError):
            path_angles(self.scene, Segment.RIS_UE, -1)


class TestScene(unittest.TestCase):

    def test_coinciding_terminals(self):
        with self.assertRaises(InvalidSceneError):
            Scene(bs_position=[0, 0], ris_position=[0, 0], ue_position=[5, 3])

    def test_scatterer_on_endpoint(self):
        with self.assertRaises(InvalidSceneError):
            Scene(bs_position=[0, 0], ris_position=[2.5, 4], ue_position=[5, 3], scatterers_rm=[[5, 3]])

    def test_non_finite(self):
        with self.assertRaises(InvalidSceneError):
            Scene(bs_position=[0, np.nan], ris_position=[2.5, 4], ue_position=[5, 3])

    def test_positions_read_only(self):
        scene = Scene(bs_position=[0, 0], ris_position=[2.5, 4], ue_position=[5, 3])
        with self.assertRaises(ValueError):
            scene.ue_position[0] = 1.0
        moved = scene.with_ue([1, 1])
        np.testing.assert_array_equal(moved.ue_position, [1, 1])
        np.testing.assert_array_equal(scene.ue_position, [5, 3])


class TestRecoverPosition(unittest.TestCase):

    def test_inverts_geometry(self):
        rng = np.random.default_rng(7)
        errors = []
        for _ in range(1000):
            ris, ue = rng.uniform(-10, 10, 2), rng.uniform(-10, 10, 2)
            offset = ue - ris
            aor = np.arctan2(offset[1], offset[0])
            toa = np.linalg.norm(offset) / SPEED_OF_LIGHT
            errors.append(np.linalg.norm(recover_position(ris, aor, toa) - ue))
        self.assertLess(max(errors), 1e-9)

    def test_zero_delay(self):
        np.testing.assert_allclose(recover_position([2.5, 4], 0.3, 0.0), [2.5, 4])

    def test_negative_delay(self):
        with self.assertRaises(InvalidDelayError):
            recover_position([2.5, 4], 0.3, -1e-9)


if __name__ == '__main__':
    unittest.main()
