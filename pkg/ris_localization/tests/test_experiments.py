import os
import tempfile
import unittest
from pathlib import Path
from unittest import mock

import numpy as np

from ris_localization.experiments import (
    RESULT_COLUMNS,
    Metric,
    SweepSpec,
    SweepVariable,
    complexity_report,
    placement_heatmap,
    placement_lattice,
    rmse,
    run_sweep,
)
from ris_localization.functions.errors import ConfigValueError, ShapeMismatchError
from ris_localization.functions.utils import load_config, n_workers, trial_seed

SLOW = os.environ.get('RIS_LOCALIZATION_SLOW')


class TestRmse(unittest.TestCase):

    def test_scalars(self):
        self.assertAlmostEqual(rmse([0, 0], [3, 4]), np.sqrt(12.5))

    def test_vectors(self):
        self.assertAlmostEqual(rmse([[0, 0], [1, 1]], [[3, 4], [1, 1]]), np.sqrt(12.5))

    def test_errors(self):
        with self.assertRaises(ValueError):
            rmse([], [])
        with self.assertRaises(ShapeMismatchError):
            rmse([1, 2], [1, 2, 3])


class TestComplexityReport(unittest.TestCase):

    def test_printed_dimensions(self):
        with self.assertLogs('ris_localization', level='WARNING') as logs:
            table = complexity_report(8, 10, 60)
        self.assertEqual(len(logs.records), 1)
        self.assertEqual(list(table.algorithm), ['dcs_somp', 'sbl', 'gsbl', 'tmsbl', 'amp'])
        values = dict(zip(table.algorithm, table.formula_value))
        self.assertEqual(values, {'dcs_somp': 216640, 'sbl': 2165120, 'gsbl': 728000, 'tmsbl': 224512, 'amp': 4800})
        annotated = table[table.annotation != '']
        self.assertEqual(list(annotated.algorithm), ['gsbl'])
        self.assertEqual(int(annotated.printed_value.iloc[0]), 5336000)

    def test_other_dimensions(self):
        table = complexity_report(16, 10, 64)
        self.assertTrue(table.printed_value.isna().all())
        self.assertTrue((table.annotation == '').all())

    def test_dimension_lists(self):
        table = complexity_report([8, 16, 32], 10, [60, 64])
        self.assertEqual(len(table), 3 * 2 * 5)
        self.assertEqual(table.printed_value.notna().sum(), 5)
        rows = table.set_index(['algorithm', 'n_ris', 'n_blocks']).formula_value
        self.assertEqual(rows['tmsbl', 16, 60], 16 ** 3 + 60 ** 3 + 16 * 10 ** 3)
        self.assertEqual(rows['amp', 32, 64], 32 * 10 * 64)


class TestSweepSetup(unittest.TestCase):

    def setUp(self) -> None:
        self.config = load_config()

    def test_lattice(self):
        lattice = placement_lattice((0.0, 5.0), 0.5)
        self.assertEqual(len(lattice), 121)
        self.assertIn((0.0, 0.0), lattice)
        self.assertIn((5.0, 5.0), lattice)

    def test_spec_validation(self):
        with self.assertRaises(ValueError):
            SweepSpec(variable='snr_db', values=[0.0], solvers=['lasso'], n_trials=1, base_config=self.config, seed=0)
        with self.assertRaises(ValueError):
            SweepSpec(variable='snr_db', values=[0.0], solvers=['tmsbl'], n_trials=0, base_config=self.config, seed=0)
        with self.assertRaises(ValueError):
            SweepSpec(variable='n_blocks', values=[64, 32], solvers=['tmsbl'], n_trials=1, base_config=self.config,
                      seed=0)
        spec = SweepSpec.from_config(self.config)
        self.assertEqual(spec.variable, SweepVariable.SNR_DB)
        self.assertEqual(spec.values, (0.0,))
        self.assertEqual(spec.n_trials, 100)

    def test_trial_seed(self):
        self.assertEqual(trial_seed(0, 'SNR_DB', 10.0, 3), trial_seed(0, 'SNR_DB', 10.0, 3))
        self.assertNotEqual(trial_seed(0, 'SNR_DB', 10.0, 3), trial_seed(0, 'SNR_DB', 10.0, 4))
        self.assertNotEqual(trial_seed(0, 'SNR_DB', 10.0, 3), trial_seed(1, 'SNR_DB', 10.0, 3))

    def test_workers(self):
        with mock.patch.dict(os.environ, {'RIS_LOCATE_THREADS': '3'}):
            self.assertEqual(n_workers(), 3)
        with mock.patch.dict(os.environ, {'RIS_LOCATE_THREADS': '0'}):
            with self.assertRaises(ConfigValueError):
                n_workers()


class TestRunSweep(unittest.TestCase):

    def setUp(self) -> None:
        self.config = load_config(overrides={
            'waveform': {'snr_db': [10.0, 20.0]},
            'solver': {'solvers': ['tmsbl', 'omp']},
            'experiment': {'n_trials': 2},
        })
        self.tmp_dir = tempfile.TemporaryDirectory()

    def test_table(self):
        result = run_sweep(SweepSpec.from_config(self.config), workers=1)
        table = result.table
        self.assertEqual(list(table.columns), RESULT_COLUMNS)
        self.assertEqual(len(table), 2 * 2 * 3)
        self.assertEqual(set(table.sweep_variable), {'SNR_DB'})
        self.assertEqual(set(table.sweep_value), {'10', '20'})
        self.assertEqual(set(table.metric), {m.value for m in Metric})
        self.assertTrue((table.n_trials == 2).all())
        self.assertTrue((table.n_failed <= 2).all())
        self.assertEqual(len(result.trials), 2 * 2 * 2)
        self.assertEqual(set(result.timings), {'10', '20'})

    def test_deterministic(self):
        spec = SweepSpec.from_config(self.config)
        paths = [Path(self.tmp_dir.name).joinpath(f'run_{i}.csv') for i in range(2)]
        for path in paths:
            run_sweep(spec, workers=1).to_csv(path)
        self.assertEqual(paths[0].read_bytes(), paths[1].read_bytes())

    def test_invalid_ris_position(self):
        spec = SweepSpec(variable=SweepVariable.RIS_POSITION, values=[(0.0, 0.0), (2.5, 4.0)], solvers=('tmsbl',),
                         n_trials=1, base_config=self.config, seed=0, metrics=(Metric.RMSE_POSITION_M,))
        with self.assertLogs('ris_localization', level='WARNING'):
            table = run_sweep(spec, workers=1).table
        self.assertEqual(list(table.sweep_value), ['0;0', '2.5;4'])
        invalid = table.iloc[0]
        self.assertTrue(np.isnan(invalid.value))
        self.assertEqual(invalid.n_failed, 1)

    def test_heatmap_skips_invalid_points(self):
        grid = [(0.0, 0.0), (2.5, 4.0), (5.0, 1.0)]
        result = placement_heatmap(grid, self.config, n_trials=1, workers=1)
        self.assertEqual(list(result.table.sweep_value), ['2.5;4'])
        self.assertEqual(list(result.table.metric), ['RMSE_POSITION_M'])
        self.assertEqual(list(result.table.solver), ['tmsbl'])

    def tearDown(self) -> None:
        self.tmp_dir.cleanup()


@unittest.skipUnless(SLOW, 'set RIS_LOCALIZATION_SLOW to run the Monte Carlo comparisons')
class TestMonteCarlo(unittest.TestCase):

    def position_rmse(self, overrides, index='sweep_value'):
        table = run_sweep(SweepSpec.from_config(load_config(overrides=overrides))).table
        return table[table.metric == Metric.RMSE_POSITION_M.value].set_index(index).value

    def test_more_elements_localize_better(self):
        position = self.position_rmse({'experiment': {'sweep': 'n_elements', 'values': [8, 16], 'n_trials': 200}})
        self.assertLess(position['16'], position['8'])
        self.assertTrue(((position >= 0.1) & (position <= 0.7)).all())

    def test_solver_ordering(self):
        position = self.position_rmse({'solver': {'solvers': ['tmsbl', 'gsbl', 'omp', 'amp']},
                                       'experiment': {'n_trials': 200}}, index='solver')
        self.assertLessEqual(position['tmsbl'], 1.1 * position['gsbl'])
        for solver in ['tmsbl', 'gsbl']:
            self.assertLessEqual(position[solver], position['omp'])
            self.assertLessEqual(position[solver], position['amp'])

    def test_aor_floor(self):
        config = load_config(overrides={'waveform': {'snr_db': [20.0, 40.0]}, 'experiment': {'n_trials': 200}})
        table = run_sweep(SweepSpec.from_config(config)).table
        aor = table[table.metric == Metric.RMSE_AOR_RAD.value].set_index('sweep_value').value
        self.assertLess(abs(aor['20'] - aor['40']) / max(aor['20'], aor['40']), 0.2)
        # half of the RIS grid spacing 2 / N_R in sine
        self.assertTrue((aor <= np.arcsin(1 / 8)).all())

    def test_placement_peak(self):
        config = load_config(overrides={'experiment': {'heatmap_ue': [5.0, 1.0], 'n_trials': 50}})
        table = placement_heatmap(placement_lattice((0.0, 5.0), 0.5), config).table.set_index('sweep_value')
        failure = table.n_failed / table.n_trials
        peak_cells = [c for c in ['0;1', '0;0.5', '0;1.5', '0.5;0.5', '0.5;1', '0.5;1.5'] if c in table.index]
        peak = [table.value[c] >= 3 * table.value.median() or (failure[c] > 0 and failure[c] >= 3 * failure.median())
                for c in peak_cells]
        self.assertTrue(any(peak))


if __name__ == '__main__':
    unittest.main()
