import math
from unittest import mock

import numpy as np
from django.test import SimpleTestCase, tag
from scipy.constants import c as SPEED_OF_LIGHT

from estimation.estimator import CoarseGrid, EstimatorOptions
from sensing.echo import SensingLink, comm_channel, comm_gain, noise_power, steering_vector
from sensing.exceptions import ConfigError, EstimationFailure, GeometryError, NonFiniteObjectiveError
from sensing.geometry import ArrayGeometry, Position, TargetState, Velocity, cartesian_distance, propagate_state
from sensing.streams import Stream, derive_stream

from .beamformer import (
    BeamformerSpec, beamformer_matrix, cpi_rate, make_beamformer, matched_rate, per_symbol_snr,
    qpsk_symbols, transmit_frame,
)
from .tracker import PredictiveTracker, TrackingScenario, run_tracking
from .trajectory import StationaryTrajectory, Trajectory, prediction_error_bound

WAVELENGTH = SPEED_OF_LIGHT / 28e9
SYMBOL_PERIOD = 1e-5
NOISE = noise_power(-174.0, 100e3)
BETA_C = comm_gain(WAVELENGTH, 1.0, 1.0)
GENTLE_PATH = [
    [-8.0, 6.0], [-5.5, 6.0], [-3.01, 6.22], [-0.55, 6.65], [1.87, 7.30],
    [4.22, 8.15], [6.48, 9.21], [8.65, 10.46], [10.70, 11.89], [12.61, 13.50],
]


def array(num_antennas=512):
    return ArrayGeometry.half_wavelength(num_antennas, WAVELENGTH)


def scenario(trajectory, num_cpis, num_antennas=512, num_symbols=200, power=1.0, noise=0.0, **kwargs):
    return TrackingScenario(
        geometry=array(num_antennas),
        trajectory=trajectory,
        num_symbols=num_symbols,
        symbol_period=SYMBOL_PERIOD,
        power=power,
        link=SensingLink.from_radar_equation(WAVELENGTH, 1.0, 1.0, 10 ** -2.3, noise),
        comm_gain=BETA_C,
        noise_power=NOISE,
        seed=2024,
        num_cpis=num_cpis,
        estimator=EstimatorOptions(coarse_grid=CoarseGrid()),
        **kwargs,
    )


class BeamformerTests(SimpleTestCase):

    def setUp(self):
        self.geom = array(64)
        self.spec = BeamformerSpec(Position(5.0, 1.2), Velocity(6.0, -9.0), power=2.0)

    def test_every_snapshot_has_full_power(self):
        for n in (0, 1, 57, 199):
            w = make_beamformer(self.spec, self.geom, n, SYMBOL_PERIOD)
            self.assertAlmostEqual(float(np.vdot(w, w).real) / 2.0, 1.0, places=12)

    def test_matrix_matches_snapshots(self):
        matrix = beamformer_matrix(self.spec, self.geom, 10, SYMBOL_PERIOD)
        for n in range(10):
            np.testing.assert_allclose(matrix[:, n], make_beamformer(self.spec, self.geom, n, SYMBOL_PERIOD))

    def test_no_velocity_means_no_compensation(self):
        static = BeamformerSpec(self.spec.position, Velocity(0.0, 0.0), 2.0, dfc=True)
        plain = BeamformerSpec(self.spec.position, Velocity(0.0, 0.0), 2.0, dfc=False)
        np.testing.assert_array_equal(
            beamformer_matrix(static, self.geom, 8, SYMBOL_PERIOD),
            beamformer_matrix(plain, self.geom, 8, SYMBOL_PERIOD),
        )

    def test_matched_gain_is_constant(self):
        truth = TargetState(5.0, 1.2, 6.0, -9.0)
        a = steering_vector(truth, self.geom)
        expected = abs(BETA_C) * math.sqrt(2.0) * np.linalg.norm(a)
        for n in (0, 30, 199):
            w = make_beamformer(self.spec, self.geom, n, SYMBOL_PERIOD)
            gain = abs(comm_channel(truth, self.geom, BETA_C, n, SYMBOL_PERIOD) @ w)
            self.assertAlmostEqual(gain / expected, 1.0, places=12)

    def test_rejects_non_positive_power(self):
        with self.assertRaises(GeometryError):
            BeamformerSpec(Position(5.0, 1.0), Velocity(0.0, 0.0), power=0.0)


class TransmitFrameTests(SimpleTestCase):

    def setUp(self):
        self.geom = array(32)
        self.spec = BeamformerSpec(Position(4.0, 2.0), Velocity(3.0, 5.0), power=0.5)

    def test_unit_symbols_give_beamformer(self):
        frame = transmit_frame(self.spec, self.geom, np.ones(12), SYMBOL_PERIOD)
        np.testing.assert_array_equal(frame, beamformer_matrix(self.spec, self.geom, 12, SYMBOL_PERIOD))

    def test_column_power(self):
        symbols = qpsk_symbols(derive_stream(3, Stream.SYMBOLS, 0), 40)
        frame = transmit_frame(self.spec, self.geom, symbols, SYMBOL_PERIOD)
        np.testing.assert_allclose(np.sum(np.abs(frame) ** 2, axis=0), 0.5, rtol=1e-12)

    def test_reproducible_symbols(self):
        first = transmit_frame(self.spec, self.geom, qpsk_symbols(derive_stream(3, Stream.SYMBOLS, 4), 20), SYMBOL_PERIOD)
        second = transmit_frame(self.spec, self.geom, qpsk_symbols(derive_stream(3, Stream.SYMBOLS, 4), 20), SYMBOL_PERIOD)
        np.testing.assert_array_equal(first, second)

    def test_rejects_non_unit_symbols(self):
        with self.assertRaises(GeometryError):
            transmit_frame(self.spec, self.geom, np.array([1.0, 0.5]), SYMBOL_PERIOD)


class RateTests(SimpleTestCase):

    def setUp(self):
        self.geom = array()
        self.truth = TargetState(10.0, math.pi / 3, 10.0, 8.0)

    def _rate(self, spec, symbols=None):
        symbols = np.ones(200) if symbols is None else symbols
        transmit = transmit_frame(spec, self.geom, symbols, SYMBOL_PERIOD)
        return cpi_rate(self.truth, self.geom, BETA_C, transmit, NOISE, SYMBOL_PERIOD), transmit

    def test_matched_rate_closed_form(self):
        spec = BeamformerSpec(self.truth.position, self.truth.velocity, 1.0)
        symbols = qpsk_symbols(derive_stream(9, Stream.SYMBOLS, 0), 200)
        rate, transmit = self._rate(spec, symbols)
        expected = matched_rate(self.truth, self.geom, BETA_C, 1.0, NOISE)
        self.assertAlmostEqual(rate / expected, 1.0, places=9)
        a = steering_vector(self.truth, self.geom)
        closed = math.log2(1 + abs(BETA_C) ** 2 * float(np.vdot(a, a).real) / NOISE)
        self.assertAlmostEqual(expected / closed, 1.0, places=12)

        snr = per_symbol_snr(self.truth, self.geom, BETA_C, transmit, NOISE, SYMBOL_PERIOD)
        self.assertLessEqual(np.var(snr) / np.mean(snr) ** 2, 1e-18)

    def test_vanishing_power(self):
        spec = BeamformerSpec(self.truth.position, self.truth.velocity, 1e-40)
        rate, _ = self._rate(spec)
        self.assertLess(rate, 1e-6)

    def test_compensation_wins_under_transverse_motion(self):
        truth = TargetState(10.0, math.pi / 3, 0.0, 20.0)
        self.truth = truth
        with_dfc, _ = self._rate(BeamformerSpec(truth.position, truth.velocity, 1.0, dfc=True))
        without, _ = self._rate(BeamformerSpec(truth.position, truth.velocity, 1.0, dfc=False))
        self.assertGreater(with_dfc, without)

    def test_rate_needs_noise(self):
        spec = BeamformerSpec(self.truth.position, self.truth.velocity, 1.0)
        transmit = transmit_frame(spec, self.geom, np.ones(4), SYMBOL_PERIOD)
        with self.assertRaises(GeometryError):
            cpi_rate(self.truth, self.geom, BETA_C, transmit, 0.0, SYMBOL_PERIOD)


class TrajectoryTests(SimpleTestCase):

    def setUp(self):
        self.path = Trajectory([[-8.0, 6.0], [8.0, 6.0], [8.0, 16.0]], 20.0)

    def test_duration_and_corners(self):
        self.assertAlmostEqual(self.path.duration, 1.3)
        self.assertEqual(len(self.path.corner_times), 1)
        self.assertAlmostEqual(self.path.corner_times[0], 0.8)

    def test_state_on_first_segment(self):
        state = self.path.state_at(0.4)
        self.assertAlmostEqual(state.r, 6.0)
        self.assertAlmostEqual(state.theta, math.pi / 2)
        self.assertAlmostEqual(state.v_r, 0.0)
        self.assertAlmostEqual(state.v_theta, -20.0)

    def test_outgoing_velocity_at_corner(self):
        state = self.path.state_at(0.8)
        self.assertAlmostEqual(state.r, 10.0)
        self.assertAlmostEqual(state.v_r, 12.0)
        self.assertAlmostEqual(state.v_theta, 16.0)

    def test_velocity_jump(self):
        jumps = self.path.velocity_jumps(0.799, 0.801)
        self.assertEqual(len(jumps), 1)
        self.assertAlmostEqual(jumps[0][1], 20 * math.sqrt(2))
        self.assertEqual(self.path.velocity_jumps(0.0, 0.5), [])

    def test_rejects_time_outside(self):
        with self.assertRaises(ConfigError):
            self.path.state_at(1.5)

    def test_rejects_bad_waypoints(self):
        with self.assertRaises(ConfigError):
            Trajectory([[0.0, 5.0]], 10.0)
        with self.assertRaises(ConfigError):
            Trajectory([[0.0, 5.0], [0.0, 5.0]], 10.0)
        with self.assertRaises(ConfigError):
            Trajectory([[0.0, 5.0], [1.0, 5.0]], 0.0)

    def test_straight_line_from_state(self):
        start = TargetState(10.0, math.pi / 3, 10.0, 8.0)
        path = Trajectory.from_state(start, 0.5)
        self.assertAlmostEqual(path.duration, 0.5)
        self.assertAlmostEqual(path.speed, math.hypot(10.0, 8.0))
        state = path.state_at(0.0)
        self.assertAlmostEqual(state.r, 10.0)
        self.assertAlmostEqual(state.v_r, 10.0)
        self.assertAlmostEqual(state.v_theta, 8.0)

    def test_stationary(self):
        path = Trajectory.from_state(TargetState(10.0, 1.0), 1.0)
        self.assertIsInstance(path, StationaryTrajectory)
        self.assertEqual(path.state_at(0.7), TargetState(10.0, 1.0))
        self.assertEqual(prediction_error_bound(path, 0.2, 0.002), 0.0)

    def test_one_step_prediction_within_bound(self):
        geom = array()
        dt = 200 * SYMBOL_PERIOD
        for path in (self.path, Trajectory(GENTLE_PATH, 20.0)):
            steps = int(path.duration / dt)
            for index in range(steps):
                t = index * dt
                truth = path.state_at(t)
                predicted = propagate_state(truth.position, truth.velocity, dt, geom)
                error = cartesian_distance(predicted, path.state_at(t + dt))
                self.assertLessEqual(error, prediction_error_bound(path, t, dt) + 1e-12)


class TrackingTests(SimpleTestCase):

    def test_stationary_user(self):
        path = Trajectory.from_state(TargetState(8.0, 1.2), 1.0)
        records = run_tracking(scenario(path, 12, num_antennas=64, num_symbols=50))
        self.assertEqual(len(records), 12)
        first = records[1]
        for record in records[1:]:
            self.assertAlmostEqual(record.predicted_position.r, first.predicted_position.r, places=9)
            self.assertAlmostEqual(record.predicted_position.theta, first.predicted_position.theta, places=9)
            self.assertAlmostEqual(record.rate, first.rate, places=9)

    def test_initial_access_sends_no_data(self):
        path = Trajectory([[-2.0, 6.0], [2.0, 6.0]], 20.0)
        records = run_tracking(scenario(path, 5, num_antennas=64, num_symbols=50))
        self.assertFalse(records[0].data)
        self.assertEqual((records[0].rate, records[0].rate_optimal, records[0].rate_no_dfc), (0.0, 0.0, 0.0))
        self.assertTrue(all(record.data for record in records[1:]))
        self.assertEqual([record.index for record in records], list(range(5)))

    def test_rate_dominance(self):
        path = Trajectory([[-2.0, 6.0], [2.0, 6.0]], 20.0)
        records = run_tracking(scenario(path, 10, num_antennas=64, num_symbols=50, noise=NOISE))
        for record in records[1:]:
            self.assertGreaterEqual(record.rate_optimal + 1e-9, max(record.rate, record.rate_no_dfc))
            self.assertGreaterEqual(record.rate, 0.0)

    def test_truth_injection_reaches_optimum(self):
        path = Trajectory([[-2.0, 6.0], [2.0, 6.0]], 20.0)
        records = run_tracking(scenario(path, 6, num_antennas=64, num_symbols=50, inject_truth=True))
        for record in records[1:]:
            self.assertAlmostEqual(record.rate / record.rate_optimal, 1.0, places=9)

    def test_initial_position_error_is_reported(self):
        path = Trajectory([[-2.0, 6.0], [2.0, 6.0]], 20.0)
        tracker = PredictiveTracker(
            scenario(path, 2, num_antennas=64, num_symbols=50, initial_position_error=(0.1, 0.0))
        )
        records = tracker.run()
        self.assertAlmostEqual(records[0].position_error, 0.1, places=9)

    def test_estimator_failure_names_the_cpi(self):
        path = Trajectory([[-2.0, 6.0], [2.0, 6.0]], 20.0)
        with mock.patch(
            'beamforming.tracker.estimate_velocity',
            side_effect=NonFiniteObjectiveError("objective is nan"),
        ):
            with self.assertRaises(EstimationFailure) as raised:
                run_tracking(scenario(path, 3, num_antennas=16, num_symbols=10))
        self.assertEqual(raised.exception.cpi_index, 0)

    def test_every_cpi_stream_is_drawn(self):
        path = Trajectory([[-2.0, 6.0], [2.0, 6.0]], 20.0)
        with mock.patch('beamforming.tracker.derive_stream', wraps=derive_stream) as streams:
            run_tracking(scenario(path, 3, num_antennas=16, num_symbols=10))
        kinds = {call.args[1] for call in streams.call_args_list}
        self.assertEqual(kinds, set(Stream) - {Stream.TRIAL})
        indices = {call.args[2] for call in streams.call_args_list}
        self.assertEqual(indices, {0, 1, 2})

    @tag('slow')
    def test_noise_free_tracking_stays_within_the_step_bound(self):
        records = run_tracking(scenario(Trajectory(GENTLE_PATH, 20.0), 500))
        for before, after in zip(records, records[1:]):
            growth = after.position_error - before.position_error
            self.assertLessEqual(growth, before.error_bound + 1e-5, msg=f"CPI {after.index}")
        self.assertLess(max(record.position_error for record in records), 0.5)
