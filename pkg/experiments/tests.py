import hashlib
import json
import shutil
import tempfile
from io import StringIO
from pathlib import Path

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase, tag

from sensing.echo import db_to_linear
from sensing.exceptions import ConfigError
from sensing.streams import Stream, derive_stream
from beamforming.beamformer import qpsk_symbols

from .config import ScenarioConfig, load_config, merge
from .experiment_manager import (
    ExperimentManager, equal_snr_power, monte_carlo, receive_snr, run_experiment, sensing_transmit,
)
from .models import ExperimentRun
from .writers import MANIFEST_NAME, write_manifest, write_table

SMALL = {
    'physical': {
        'carrier_frequency': 28e9,
        'bandwidth': 100e3,
        'num_antennas': 32,
        'spacing': 'half-wavelength',
        'tx_gain': 1.0,
        'rx_gain': 1.0,
        'rcs_db': -23.0,
        'noise_density_dbm_hz': -174.0,
    },
    'cpi': {'num_symbols': 100},
    'power': {'transmit_dbm': 30.0},
    'target': {'r': 3.0, 'theta_deg': 60.0, 'v_r': 3.0, 'v_theta': 2.0},
    'experiment': {'distances': [3.0, 6.0], 'slice_points': 21},
    'seed': 7,
}


def small_config(**sections):
    return ScenarioConfig.from_dict(merge(SMALL, sections))


class TempDirMixin:

    def setUp(self):
        super().setUp()
        self.tmp = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, self.tmp, ignore_errors=True)


class ScenarioConfigTests(SimpleTestCase):

    def test_preset_derived_quantities(self):
        config = ScenarioConfig.from_dict({'preset': 'paper-2024'})
        self.assertAlmostEqual(config.symbol_period, 1e-5)
        self.assertAlmostEqual(config.cpi_duration, 2e-3)
        self.assertAlmostEqual(config.spacing / config.wavelength, 0.5)
        self.assertAlmostEqual(config.rcs / 10 ** -2.3, 1.0, places=12)
        self.assertAlmostEqual(config.noise_power / 10 ** -15.4, 1.0, places=12)
        self.assertEqual(config.geometry.num_antennas, 512)
        self.assertEqual(config.seed, 0)
        self.assertGreaterEqual(config.num_cpis, 500)

    def test_missing_field_is_named(self):
        data = merge(SMALL, {})
        del data['physical']['bandwidth']
        with self.assertRaisesMessage(ConfigError, 'physical.bandwidth: This field is required.'):
            ScenarioConfig.from_dict(data)

    def test_non_positive_field_is_named(self):
        with self.assertRaisesMessage(ConfigError, 'physical.bandwidth: Must be positive'):
            small_config(physical={'bandwidth': -1.0})

    def test_unknown_keys(self):
        with self.assertRaisesMessage(ConfigError, 'physical.colour: unknown field'):
            small_config(physical={'colour': 'blue'})
        with self.assertRaisesMessage(ConfigError, 'radar: unknown section'):
            small_config(radar={})
        with self.assertRaisesMessage(ConfigError, 'preset: unknown preset'):
            ScenarioConfig.from_dict({'preset': 'legacy-2019'})

    def test_physical_needs_preset_or_section(self):
        data = merge(SMALL, {})
        del data['physical']
        with self.assertRaisesMessage(ConfigError, 'physical: section is required'):
            ScenarioConfig.from_dict(data)

    def test_seed_range(self):
        self.assertEqual(small_config(seed=2 ** 64 - 1).seed, 2 ** 64 - 1)
        self.assertEqual(small_config(seed='12').seed, 12)
        for seed in (-1, 2 ** 64, 'abc'):
            with self.assertRaisesMessage(ConfigError, 'seed:'):
                small_config(seed=seed)

    def test_target_inside_aperture(self):
        with self.assertRaisesMessage(ConfigError, 'target.r:'):
            ScenarioConfig.from_dict({'preset': 'paper-2024', 'target': {'r': 0.5}})

    def test_distance_inside_aperture(self):
        with self.assertRaisesMessage(ConfigError, 'experiment.distances:'):
            ScenarioConfig.from_dict({'preset': 'paper-2024', 'experiment': {'distances': [10.0, 0.2]}})

    def test_angle_range(self):
        with self.assertRaisesMessage(ConfigError, 'target.theta_deg:'):
            small_config(target={'theta_deg': 180.0})

    def test_power_given_twice(self):
        with self.assertRaisesMessage(ConfigError, 'power: Give the transmit power in dBm or in W'):
            small_config(power={'transmit_w': 1.0})

    def test_power_levels_are_required(self):
        config = small_config()
        with self.assertRaisesMessage(ConfigError, 'power.levels_dbm'):
            config.power_levels
        levels = small_config(power={'levels_dbm': [20, 30]}).power_levels
        self.assertEqual([label for label, _ in levels], ['20dBm', '30dBm'])
        self.assertAlmostEqual(levels[1][1], 1.0)

    def test_cpi_count_must_fit_the_trajectory(self):
        self.assertEqual(small_config(cpi={'count': 4}).num_cpis, 4)
        with self.assertRaisesMessage(ConfigError, 'cpi.count:'):
            ScenarioConfig.from_dict({'preset': 'paper-2024', 'cpi': {'count': 5000}})

    def test_overrides_and_hash(self):
        config = small_config()
        self.assertEqual(config.config_hash, small_config().config_hash)
        other = config.with_overrides({'seed': 8, 'experiment': {'trials': 3}})
        self.assertEqual(other.seed, 8)
        self.assertEqual(other.experiment['trials'], 3)
        self.assertEqual(other.target, config.target)
        self.assertNotEqual(other.config_hash, config.config_hash)

    def test_estimator_options(self):
        options = small_config(estimator={'coarse_grid': False, 'direction': 'gradient'}).estimator_options()
        self.assertIsNone(options.coarse_grid)
        self.assertEqual(options.direction, 'gradient')
        with self.assertRaisesMessage(ConfigError, 'estimator.shrink:'):
            small_config(estimator={'shrink': 1.5})


class LoadConfigTests(TempDirMixin, SimpleTestCase):

    def test_file_preset_and_overrides(self):
        path = self.tmp / 'scenario.json'
        path.write_text(json.dumps({'preset': 'paper-2024', 'cpi': {'num_symbols': 100}}))
        config = load_config(path, overrides={'seed': '5'})
        self.assertEqual(config.preset, 'paper-2024')
        self.assertEqual(config.num_symbols, 100)
        self.assertEqual(config.physical['num_antennas'], 512)
        self.assertEqual(config.seed, 5)

    def test_cli_preset_is_a_fallback(self):
        path = self.tmp / 'scenario.json'
        path.write_text(json.dumps(SMALL))
        self.assertIsNone(load_config(path).preset)
        self.assertEqual(load_config(path, preset='paper-2024').physical['num_antennas'], 32)

    def test_bad_files(self):
        with self.assertRaisesMessage(ConfigError, 'does not exist'):
            load_config(self.tmp / 'missing.json')
        broken = self.tmp / 'broken.json'
        broken.write_text('{"physical": ')
        with self.assertRaisesMessage(ConfigError, 'not valid JSON'):
            load_config(broken)
        listing = self.tmp / 'list.json'
        listing.write_text('[1, 2]')
        with self.assertRaisesMessage(ConfigError, 'JSON object'):
            load_config(listing)


class WriterTests(TempDirMixin, SimpleTestCase):

    def test_table_format(self):
        artifact = write_table(self.tmp, 'numbers', [{'x': 0.1, 'n': 1}, {'x': 1 / 3, 'n': 2}])
        content = (self.tmp / 'numbers.csv').read_bytes()
        self.assertEqual(content, b'x,n\r\n0.10000000000000001,1\r\n0.33333333333333331,2\r\n')
        self.assertEqual(artifact.rows, 2)
        self.assertEqual(artifact.columns, ('x', 'n'))
        self.assertEqual(artifact.sha256, hashlib.sha256(content).hexdigest())

    def test_manifest(self):
        config = small_config(seed=2 ** 64 - 1)
        artifact = write_table(self.tmp, 'numbers', [{'x': 1.0}])
        path = write_manifest(self.tmp, 'convergence', config, [artifact], {'iterations': 3})
        manifest = json.loads(path.read_text())
        self.assertEqual(path.name, MANIFEST_NAME)
        self.assertEqual(manifest['seed'], str(2 ** 64 - 1))
        self.assertEqual(manifest['config_hash'], config.config_hash)
        self.assertEqual(manifest['files'][0]['file'], 'numbers.csv')
        self.assertEqual(manifest['extra'], {'iterations': 3})
        self.assertAlmostEqual(manifest['derived']['symbol_period_s'], 1e-5)
        self.assertIn('numpy', manifest['versions'])


class EqualSnrTests(SimpleTestCase):

    def test_power_equalises_receive_snr(self):
        config = small_config()
        symbols = qpsk_symbols(derive_stream(config.seed, Stream.SYMBOLS, 0), config.num_symbols)
        target = db_to_linear(config.experiment['receive_snr_db'])
        powers = []
        for distance in (3.0, 6.0, 12.0):
            state = config.target_state(distance)
            power = equal_snr_power(config, state, symbols)
            transmit = sensing_transmit(config, state.position, power, symbols)
            self.assertAlmostEqual(receive_snr(config, state, transmit) / target, 1.0, places=9)
            powers.append(power)
        self.assertLess(powers[0], powers[1])
        self.assertLess(powers[1], powers[2])


class RecipeTests(TempDirMixin, SimpleTestCase):

    def test_ml_map_tables(self):
        output = run_experiment('ml-map', small_config(), out=self.tmp)
        slices, curvature = output.tables['slices'], output.tables['curvature']
        self.assertEqual(len(slices), 2 * 2 * 21)
        self.assertEqual(len(curvature), 4)
        self.assertAlmostEqual(slices.groupby(['distance_m', 'axis'])['objective_normalised'].max().min(), 1.0)
        self.assertEqual(sorted(output.extra['power_w_by_distance']), ['3', '6'])
        self.assertTrue((self.tmp / 'ml-map' / 'slices.csv').exists())
        self.assertTrue((self.tmp / 'ml-map' / MANIFEST_NAME).exists())

    def test_convergence_trace(self):
        output = run_experiment('convergence', small_config(experiment={'noise': False}), out=self.tmp)
        trace = output.tables['convergence']
        self.assertEqual(list(trace['iteration']), list(range(len(trace))))
        self.assertEqual(len(trace), output.extra['iterations'] + 1)
        self.assertLess(abs(trace['error_v_r_mps'].iloc[-1]), 0.1)
        self.assertGreaterEqual(trace['objective'].iloc[-1], trace['objective'].iloc[0])
        self.assertEqual(output.extra['truth'], [3.0, 2.0])

    def test_json_output(self):
        config = small_config(output={'formats': ['csv', 'json']})
        output = run_experiment('convergence', config, out=self.tmp)
        names = sorted(artifact.file_name for artifact in output.artifacts)
        self.assertEqual(names, ['convergence.csv', 'convergence.json'])
        records = json.loads((self.tmp / 'convergence' / 'convergence.json').read_text())
        self.assertEqual(len(records), len(output.tables['convergence']))

    def test_track_and_rate_curve(self):
        config = small_config(power={'levels_dbm': [20, 30]}, cpi={'count': 4})
        track = run_experiment('track', config, out=self.tmp).tables['track']
        self.assertEqual(len(track), 8)
        self.assertFalse(any(column.startswith('rate') for column in track.columns))
        self.assertEqual(list(track['cpi'][:4]), [0, 1, 2, 3])
        self.assertFalse(track['data'].iloc[0])

        rate = run_experiment('rate-curve', config, out=self.tmp).tables['rate']
        self.assertEqual(list(rate['power'].unique()), ['20dBm', '30dBm'])
        data = rate[rate['data']]
        self.assertTrue((data['rate_optimal'] + 1e-9 >= data['rate']).all())

    def test_track_needs_power_levels(self):
        with self.assertRaisesMessage(ConfigError, 'power.levels_dbm'):
            run_experiment('track', small_config(cpi={'count': 3}), out=self.tmp)

    def test_unknown_experiment(self):
        with self.assertRaisesMessage(ConfigError, 'unknown experiment'):
            run_experiment('spectrogram', small_config(), out=self.tmp)

    def test_identical_runs_are_byte_identical(self):
        config = small_config(power={'levels_dbm': [30]}, cpi={'count': 3})
        for name, table in (('ml-map', 'slices.csv'), ('convergence', 'convergence.csv'), ('rate-curve', 'rate.csv')):
            first = run_experiment(name, config, out=self.tmp / 'a')
            second = run_experiment(name, config, out=self.tmp / 'b')
            self.assertEqual(
                (first.directory / table).read_bytes(), (second.directory / table).read_bytes()
            )

    def test_seed_changes_the_noise(self):
        first = run_experiment('convergence', small_config(seed=1), out=self.tmp / 'a')
        second = run_experiment('convergence', small_config(seed=2), out=self.tmp / 'b')
        self.assertNotEqual(
            first.tables['convergence']['v_r_mps'].iloc[-1],
            second.tables['convergence']['v_r_mps'].iloc[-1],
        )

    @tag('slow')
    def test_transverse_lobe_flattens_with_distance(self):
        config = ScenarioConfig.from_dict({
            'preset': 'paper-2024',
            'experiment': {'noise': False, 'slice_points': 41},
        })
        curvature = run_experiment('ml-map', config, out=self.tmp).tables['curvature']
        transverse = curvature[curvature['axis'] == 'transverse']['curvature'].abs().tolist()
        radial = curvature[curvature['axis'] == 'radial']['curvature'].abs().tolist()
        self.assertGreater(transverse[0], transverse[1])
        self.assertGreater(transverse[1], transverse[2])
        self.assertGreater(min(radial), 0.5 * max(radial))


class MonteCarloTests(TempDirMixin, SimpleTestCase):

    def test_single_trial_reproduces_a_plain_run(self):
        config = small_config()
        plain = run_experiment('convergence', config, out=self.tmp)
        repeated = monte_carlo('convergence', config, trials=1, out=self.tmp)
        final = plain.tables['convergence'].iloc[-1]
        trial = repeated.tables['convergence-trials'].iloc[0]
        self.assertEqual(trial['est_v_r_mps'], final['v_r_mps'])
        self.assertEqual(trial['est_v_theta_mps'], final['v_theta_mps'])
        self.assertEqual(trial['seed'], str(config.seed))

    def test_more_trials_extend_earlier_ones(self):
        config = small_config()
        two = monte_carlo('convergence', config, trials=2, out=self.tmp / 'a').tables['convergence-trials']
        four = monte_carlo('convergence', config, trials=4, workers=3, out=self.tmp / 'b').tables['convergence-trials']
        self.assertEqual(list(four['trial']), [0, 1, 2, 3])
        self.assertEqual(list(four['est_v_r_mps'][:2]), list(two['est_v_r_mps']))
        self.assertEqual(len(set(four['seed'])), 4)

    def test_summary_per_power(self):
        config = small_config(power={'levels_dbm': [20, 30]}, cpi={'count': 3})
        output = monte_carlo('track', config, trials=2, workers=2, out=self.tmp)
        summary = output.tables['track-summary']
        self.assertEqual(list(summary['power']), ['20dBm', '30dBm'])
        self.assertEqual(list(summary['trials']), [2, 2])
        self.assertTrue((summary['rmse_position_m'] >= 0).all())
        self.assertEqual(output.directory, self.tmp / 'monte-carlo')

    def test_rejects_other_recipes(self):
        with self.assertRaisesMessage(ConfigError, 'monte-carlo runs'):
            monte_carlo('ml-map', small_config(), out=self.tmp)

    @tag('slow')
    def test_error_shrinks_with_power(self):
        config = small_config(
            physical={'num_antennas': 64},
            cpi={'num_symbols': 64},
            power={'levels_dbm': [-30, -20, -10]},
        )
        summary = monte_carlo('convergence', config, trials=30, workers=4, out=self.tmp).tables['convergence-summary']
        rmse = summary['rmse_v_r_mps'].tolist()
        self.assertGreater(rmse[0], rmse[1])
        self.assertGreater(rmse[1], rmse[2])


class RunRegistryTests(TempDirMixin, TestCase):

    def test_finished_run_is_recorded(self):
        config = small_config()
        run_experiment('convergence', config, out=self.tmp, record=True)
        run = ExperimentRun.objects.get()
        self.assertEqual(run.name, 'convergence')
        self.assertEqual(run.status, 'finished')
        self.assertEqual(run.seed, '7')
        self.assertEqual(run.config_hash, config.config_hash)
        self.assertEqual(run.get_config()['target']['r'], 3.0)
        artifact = run.artifacts.get()
        self.assertEqual(artifact.file_name, 'convergence.csv')
        self.assertIn('objective', artifact.get_columns())

    def test_failed_run_is_recorded(self):
        with self.assertRaises(ConfigError):
            run_experiment('track', small_config(cpi={'count': 3}), out=self.tmp, record=True)
        run = ExperimentRun.objects.get()
        self.assertEqual(run.status, 'failed')
        self.assertIn('power.levels_dbm', run.message)
        self.assertFalse(run.artifacts.exists())

    def test_large_seed_fits(self):
        run = ExperimentManager.record_run('ml-map', small_config(seed=2 ** 64 - 1), self.tmp, [])
        self.assertEqual(ExperimentRun.objects.get(pk=run.pk).seed, str(2 ** 64 - 1))

    def test_runs_are_stored_once_finished_or_failed(self):
        self.assertEqual([status for status, _ in ExperimentRun.STATUSES], ['finished', 'failed'])
        run = ExperimentManager.record_run('ml-map', small_config(), self.tmp, [])
        self.assertEqual(run.status, 'finished')


class CommandTests(TempDirMixin, TestCase):

    def setUp(self):
        super().setUp()
        self.config_path = self.tmp / 'scenario.json'
        self.config_path.write_text(json.dumps(SMALL))

    def test_runs_and_records(self):
        stdout = StringIO()
        call_command(
            'nfisac', 'convergence', '--config', str(self.config_path), '--out', str(self.tmp),
            '--seed', '11', stdout=stdout,
        )
        self.assertIn('convergence finished', stdout.getvalue())
        self.assertIn('convergence.csv', stdout.getvalue())
        self.assertEqual(ExperimentRun.objects.get().seed, '11')

    def test_monte_carlo_flags(self):
        call_command(
            'nfisac', 'monte-carlo', '--config', str(self.config_path), '--out', str(self.tmp),
            '--of', 'track', '--powers', '20,30', '--cpis', '3', '--trials', '2', '--no-record',
            stdout=StringIO(),
        )
        manifest = json.loads((self.tmp / 'monte-carlo' / MANIFEST_NAME).read_text())
        self.assertEqual(manifest['extra'], {'of': 'track', 'trials': 2})
        self.assertEqual(manifest['config']['power']['levels_dbm'], [20.0, 30.0])
        self.assertFalse(ExperimentRun.objects.exists())

    def test_errors_become_command_errors(self):
        with self.assertRaisesMessage(CommandError, 'track: power.levels_dbm'):
            call_command(
                'nfisac', 'track', '--config', str(self.config_path), '--out', str(self.tmp),
                '--no-record', stdout=StringIO(),
            )
        with self.assertRaisesMessage(CommandError, 'expected comma-separated numbers'):
            call_command(
                'nfisac', 'ml-map', '--config', str(self.config_path), '--distances', '3,far',
                '--no-record', stdout=StringIO(),
            )

    def test_default_preset(self):
        with self.assertRaisesMessage(CommandError, 'experiment.distances:'):
            call_command('nfisac', 'ml-map', '--distances', '0.1', '--no-record', stdout=StringIO())
