import math

import numpy as np
from django.test import SimpleTestCase, tag
from hypothesis import given, settings, strategies as st
from scipy.constants import c as SPEED_OF_LIGHT

from beamforming.beamformer import BeamformerSpec, qpsk_symbols, transmit_frame
from sensing.echo import EchoFrame, SensingLink, complex_noise, generate_echo, signal_matrix
from sensing.exceptions import ConfigError, DegenerateModelError
from sensing.geometry import ArrayGeometry, Position, TargetState, Velocity
from sensing.streams import Stream, derive_stream

from .estimator import (
    Axis, CoarseGrid, ConcentratedLikelihood, EstimatorOptions, curvature, estimate_beta,
    estimate_velocity, grid_search, ml_gradient, ml_objective, ml_slice,
)
from .line_search import (
    AscentResult, Direction, LineSearchOptions, Termination, ascend, backtracking_line_search,
)

WAVELENGTH = SPEED_OF_LIGHT / 28e9
BETA = 0.6 * np.exp(0.9j)


def toy_frame(num_antennas=8, num_symbols=16, state=None, symbol_period=1e-4, gain=BETA,
              noise=0.0, seed=0):
    """Small near-field frame: QPSK through a beam toward the target."""
    geom = ArrayGeometry.half_wavelength(num_antennas, WAVELENGTH)
    state = state or TargetState(0.2, 1.1, 3.1, -4.7)
    symbols = qpsk_symbols(derive_stream(seed, Stream.SYMBOLS, 0), num_symbols)
    spec = BeamformerSpec(state.position, Velocity(0.0, 0.0), 1.0, dfc=False)
    transmit = transmit_frame(spec, geom, symbols, symbol_period)
    link = SensingLink(gain=gain, noise_power=noise)
    frame = generate_echo(state, geom, link, transmit, symbol_period, derive_stream(seed, Stream.ECHO_NOISE, 0))
    return frame, state


def full_scale_frame(state, phase=0.0):
    """Noise-free frame at 28 GHz with M=512, N=200 and T_s = 10 µs."""
    geom = ArrayGeometry.half_wavelength(512, WAVELENGTH)
    symbols = qpsk_symbols(derive_stream(1, Stream.SYMBOLS, 0), 200)
    spec = BeamformerSpec(state.position, Velocity(0.0, 0.0), 1.0, dfc=False)
    transmit = transmit_frame(spec, geom, symbols, 1e-5)
    link = SensingLink.from_radar_equation(WAVELENGTH, 1.0, 1.0, 10 ** -2.3, 0.0, phase=phase)
    return generate_echo(state, geom, link, transmit, 1e-5, derive_stream(1, Stream.ECHO_NOISE, 0))


@st.composite
def instances(draw):
    """Random small frames evaluated on the main lobe, away from the peak."""
    num_antennas = draw(st.integers(min_value=2, max_value=16))
    num_symbols = draw(st.integers(min_value=4, max_value=32))
    geom = ArrayGeometry.half_wavelength(num_antennas, WAVELENGTH)
    r = geom.half_aperture * draw(st.floats(min_value=1.5, max_value=20.0)) + 0.02
    theta = draw(st.floats(min_value=0.1, max_value=math.pi - 0.1))
    state = TargetState(r, theta, draw(st.floats(-20, 20)), draw(st.floats(-20, 20)))
    seed = draw(st.integers(min_value=0, max_value=2 ** 32))
    frame, _ = toy_frame(num_antennas, num_symbols, state, symbol_period=1e-5, seed=seed)
    # the radial offset keeps the point off the stationary peak
    radial = draw(st.sampled_from([-1.0, 1.0])) * draw(st.floats(min_value=0.3, max_value=3.0))
    transverse = draw(st.floats(-3, 3))
    return frame, state, Velocity(state.v_r + radial, state.v_theta + transverse)


class ObjectiveTests(SimpleTestCase):

    def test_matched_value(self):
        frame, state = toy_frame()
        model = signal_matrix(state, state, frame.geometry, frame.transmit, frame.symbol_period)
        expected = abs(BETA) ** 2 * float(np.vdot(model, model).real)
        self.assertAlmostEqual(ml_objective(frame, state.position, state.velocity) / expected, 1.0, places=12)

    def test_homogeneous_in_received_scale(self):
        frame, state = toy_frame(noise=1e-3)
        v = Velocity(1.0, 2.0)
        scale = 3.0 - 4.0j
        ratio = ml_objective(frame.scaled(scale), state.position, v) / ml_objective(frame, state.position, v)
        self.assertAlmostEqual(ratio, abs(scale) ** 2, places=9)

    def test_truth_dominates_grid(self):
        frame, state = toy_frame()
        likelihood = ConcentratedLikelihood(frame, state.position)
        at_truth = likelihood.objective(state.velocity)
        _, best = grid_search(likelihood, CoarseGrid(v_max=20.0, points=41))
        self.assertGreaterEqual(at_truth * (1 + 1e-12), best)

    def test_zero_transmit_is_degenerate(self):
        geom = ArrayGeometry.half_wavelength(4, WAVELENGTH)
        frame = EchoFrame(np.ones((4, 3), complex), np.zeros((4, 3), complex), 1e-5, geom)
        with self.assertRaises(DegenerateModelError):
            ml_objective(frame, Position(1.0, 1.0), Velocity(0.0, 0.0))

    def test_dense_reference_agrees(self):
        frame, state = toy_frame(noise=1e-3)
        v = Velocity(2.0, -1.0)
        self.assertAlmostEqual(
            ml_objective(frame, state.position, v, dense=True) / ml_objective(frame, state.position, v),
            1.0, places=10,
        )

    def test_transmit_scale_keeps_argmax(self):
        frame, state = toy_frame(noise=1e-3)
        scaled = EchoFrame(frame.received * 2.5, frame.transmit * 2.5, frame.symbol_period, frame.geometry)
        grid = CoarseGrid(v_max=10.0, points=21)
        best, value = grid_search(ConcentratedLikelihood(frame, state.position), grid)
        best_scaled, value_scaled = grid_search(ConcentratedLikelihood(scaled, state.position), grid)
        self.assertEqual(best, best_scaled)
        self.assertAlmostEqual(value_scaled / value, 2.5 ** 2, places=9)


class BetaTests(SimpleTestCase):

    def test_matched_gain_is_exact(self):
        frame, state = toy_frame()
        beta = estimate_beta(frame, state.position, state.velocity)
        self.assertLessEqual(abs(beta - BETA), 1e-12 * abs(BETA))

    def test_zero_echo(self):
        frame, state = toy_frame()
        silent = frame.scaled(0.0)
        self.assertEqual(estimate_beta(silent, state.position, Velocity(1.0, 1.0)), 0)

    def test_mismatch_shrinks_gain(self):
        frame, state = toy_frame()
        for v in (Velocity(0.0, 0.0), Velocity(5.0, -2.0), Velocity(3.1, 4.7)):
            self.assertLess(abs(estimate_beta(frame, state.position, v)), abs(BETA))


class GradientTests(SimpleTestCase):

    @given(instances())
    @settings(max_examples=100, deadline=None)
    def test_matches_central_differences(self, instance):
        frame, state, v = instance
        likelihood = ConcentratedLikelihood(frame, state.position)
        analytic = likelihood.gradient(v)
        h = 1e-4
        numeric = np.array([
            (likelihood.objective((v.v_r + h, v.v_theta)) - likelihood.objective((v.v_r - h, v.v_theta))) / (2 * h),
            (likelihood.objective((v.v_r, v.v_theta + h)) - likelihood.objective((v.v_r, v.v_theta - h))) / (2 * h),
        ])
        self.assertLessEqual(np.linalg.norm(analytic - numeric), 1e-5 * np.linalg.norm(numeric))

    def test_dense_gradient_agrees(self):
        frame, state = toy_frame(noise=1e-3)
        v = Velocity(1.5, -2.5)
        np.testing.assert_allclose(
            ml_gradient(frame, state.position, v, dense=True),
            ml_gradient(frame, state.position, v),
            rtol=1e-9,
        )

    def test_stationary_at_truth(self):
        frame, state = toy_frame()
        gradient = ml_gradient(frame, state.position, state.velocity)
        scale = abs(curvature(frame, state.position, state.velocity, Axis.RADIAL, h=0.01))
        self.assertLessEqual(np.linalg.norm(gradient), 1e-6 * scale)

    def test_value_and_gradient_agree_with_objective(self):
        frame, state = toy_frame(noise=1e-3)
        likelihood = ConcentratedLikelihood(frame, state.position)
        value, _ = likelihood.value_and_gradient((2.0, 1.0))
        self.assertAlmostEqual(value / likelihood.objective((2.0, 1.0)), 1.0, places=12)


class LineSearchTests(SimpleTestCase):
    """Ascent machinery on a concave quadratic with its maximum 10 at (1, -2)."""

    peak = np.array([1.0, -2.0])
    hessian = np.array([[4.0, 1.0], [1.0, 0.5]])

    def f(self, x):
        d = np.asarray(x) - self.peak
        return 10.0 - float(d @ self.hessian @ d)

    def value_and_gradient(self, x):
        d = np.asarray(x) - self.peak
        return self.f(x), -2 * self.hessian @ d

    def test_backtracking_accepts_sufficient_increase(self):
        x = np.zeros(2)
        value, gradient = self.value_and_gradient(x)
        step, x_new, value_new = backtracking_line_search(
            self.f, x, value, gradient, gradient, 10.0, LineSearchOptions()
        )
        self.assertLess(step, 10.0)
        self.assertGreaterEqual(value_new, value + 1e-4 * step * float(gradient @ gradient))
        np.testing.assert_allclose(x_new, step * gradient)

    def test_backtracking_gives_up(self):
        x = np.zeros(2)
        value, gradient = self.value_and_gradient(x)
        result = backtracking_line_search(
            self.f, x, value, gradient, -gradient, 1.0, LineSearchOptions(max_backtracks=5)
        )
        self.assertIsNone(result)

    def test_options_validation(self):
        for bad in ({'shrink': 1.0}, {'shrink': 0.0}, {'sufficient_increase': 1.5}, {'initial_step': -1.0}):
            with self.assertRaises(ValueError):
                LineSearchOptions(**bad)

    def _ascend(self, direction, max_iters=200):
        return ascend(
            self.value_and_gradient, self.f, np.array([5.0, 5.0]),
            max_iters=max_iters, grad_tol=1e-12, step_tol=1e-10,
            options=LineSearchOptions(), direction=direction,
        )

    def test_quasi_newton_finds_peak(self):
        result = self._ascend(Direction.QUASI_NEWTON)
        self.assertIsInstance(result, AscentResult)
        np.testing.assert_allclose(result.x, self.peak, atol=1e-6)
        self.assertLess(result.iterations, 30)

    def test_gradient_direction_finds_peak(self):
        result = self._ascend(Direction.GRADIENT)
        np.testing.assert_allclose(result.x, self.peak, atol=1e-4)

    def test_trace_is_non_decreasing(self):
        for direction in Direction:
            values = self._ascend(direction).values
            self.assertTrue(all(b >= a for a, b in zip(values, values[1:])))

    def test_iteration_cap(self):
        result = self._ascend(Direction.GRADIENT, max_iters=2)
        self.assertEqual(result.termination, Termination.MAX_ITERS)
        self.assertEqual(result.iterations, 2)

    def test_first_move_is_unit_in_max_norm(self):
        result = self._ascend(Direction.GRADIENT, max_iters=1)
        move = result.iterates[1] - result.iterates[0]
        self.assertLessEqual(np.max(np.abs(move)), 1.0 + 1e-12)

    def test_start_at_peak_converges_immediately(self):
        result = ascend(
            self.value_and_gradient, self.f, self.peak, max_iters=10, grad_tol=1e-8,
            step_tol=1e-4, options=LineSearchOptions(),
        )
        self.assertEqual(result.termination, Termination.GRADIENT)
        self.assertEqual(result.iterations, 0)


class FaintObjectiveAscentTests(SimpleTestCase):
    """A 1e-10-scale Gaussian bump at (5, 0), as small as the physical likelihood."""

    centre = np.array([5.0, 0.0])

    def f(self, x):
        d = np.asarray(x) - self.centre
        return 1e-10 * math.exp(-float(d @ d) / 4)

    def value_and_gradient(self, x):
        value = self.f(x)
        return value, -value * (np.asarray(x) - self.centre) / 2

    def _ascend(self, direction):
        return ascend(
            self.value_and_gradient, self.f, np.zeros(2), max_iters=100, grad_tol=1e-8,
            step_tol=1e-4, options=LineSearchOptions(), direction=direction,
        )

    def test_both_directions_reach_the_peak(self):
        for direction in Direction:
            with self.subTest(direction=direction):
                result = self._ascend(direction)
                np.testing.assert_allclose(result.x, self.centre, atol=1e-3)
                self.assertNotEqual(result.termination, Termination.MAX_ITERS)

    def test_skipped_curvature_update_keeps_unit_moves(self):
        # The bump is convex along the first moves, so BFGS cannot update yet
        result = self._ascend(Direction.QUASI_NEWTON)
        self.assertGreater(result.iterations, 2)
        second = result.iterates[2] - result.iterates[1]
        self.assertAlmostEqual(float(np.max(np.abs(second))), 1.0, places=12)


class EstimatorOptionsTests(SimpleTestCase):

    def test_rejects_bad_limits(self):
        with self.assertRaises(ConfigError):
            EstimatorOptions(max_iters=0)
        with self.assertRaises(ConfigError):
            EstimatorOptions(grad_tol=0.0)
        with self.assertRaises(ConfigError):
            CoarseGrid(points=1)

    def test_seeded_drops_grid(self):
        options = EstimatorOptions(coarse_grid=CoarseGrid()).seeded((1.0, 2.0))
        self.assertIsNone(options.coarse_grid)
        self.assertEqual(options.init, Velocity(1.0, 2.0))

    def test_direction_accepts_strings(self):
        self.assertIs(EstimatorOptions(direction='gradient').direction, Direction.GRADIENT)


class EstimateVelocityTests(SimpleTestCase):

    def test_start_at_truth(self):
        frame, state = toy_frame()
        result = estimate_velocity(frame, state.position, EstimatorOptions(init=state.velocity))
        self.assertEqual(result.termination, Termination.GRADIENT)
        self.assertLessEqual(result.iterations, 2)
        self.assertAlmostEqual(result.velocity.v_r, state.v_r, places=6)
        self.assertAlmostEqual(result.velocity.v_theta, state.v_theta, places=6)

    def test_matches_fine_grid(self):
        frame, state = toy_frame(num_symbols=32)
        likelihood = ConcentratedLikelihood(frame, state.position)
        best, _ = grid_search(likelihood, CoarseGrid(v_max=20.0, points=201))
        result = estimate_velocity(frame, state.position, EstimatorOptions(coarse_grid=CoarseGrid()))
        cell = 40.0 / 200
        self.assertLessEqual(abs(result.velocity.v_r - best.v_r), cell)
        self.assertLessEqual(abs(result.velocity.v_theta - best.v_theta), cell)

    def test_objective_trace_is_monotone(self):
        frame, state = toy_frame(noise=1e-2)
        for direction in Direction:
            result = estimate_velocity(
                frame, state.position, EstimatorOptions(init=Velocity(0.0, 0.0), direction=direction)
            )
            trace = result.objective_trace
            self.assertTrue(all(b >= a for a, b in zip(trace, trace[1:])))
            self.assertEqual(len(result.velocity_trace), result.iterations + 1)
            self.assertEqual(result.objective, trace[-1])

    def test_gain_phase_does_not_move_the_estimate(self):
        first, state = toy_frame(gain=0.5)
        second, _ = toy_frame(gain=0.5 * np.exp(2.0j))
        options = EstimatorOptions(coarse_grid=CoarseGrid(v_max=10.0, points=11))
        a = estimate_velocity(first, state.position, options).velocity
        b = estimate_velocity(second, state.position, options).velocity
        self.assertAlmostEqual(a.v_r, b.v_r, places=6)
        self.assertAlmostEqual(a.v_theta, b.v_theta, places=6)

    @tag('slow')
    def test_noise_free_recovery_at_full_scale(self):
        options = EstimatorOptions(coarse_grid=CoarseGrid(v_max=30.0, points=31))
        for truth in (Velocity(10.0, 8.0), Velocity(10.37, 7.41)):
            state = TargetState(10.0, math.pi / 3, *truth)
            frame = full_scale_frame(state, phase=1.3)
            result = estimate_velocity(frame, state.position, options)
            self.assertLessEqual(abs(result.velocity.v_r - truth.v_r), 1e-3)
            self.assertLessEqual(abs(result.velocity.v_theta - truth.v_theta), 1e-3)
            self.assertLessEqual(result.iterations, 30)

    @tag('slow')
    def test_previous_estimate_seed_recovers_after_a_turn(self):
        state = TargetState(10.0, math.pi / 3, -5.48, 18.0)
        frame = full_scale_frame(state, phase=0.4)
        result = estimate_velocity(frame, state.position, EstimatorOptions().seeded(Velocity(-4.78, 17.6)))
        self.assertNotEqual(result.termination, Termination.MAX_ITERS)
        self.assertLessEqual(abs(result.velocity.v_r - state.v_r), 1e-3)
        self.assertLessEqual(abs(result.velocity.v_theta - state.v_theta), 1e-3)

    @tag('slow')
    def test_grid_seeding_beats_a_cold_start(self):
        state = TargetState(10.0, math.pi / 3, 10.0, 8.0)
        frame = full_scale_frame(state)
        cold = estimate_velocity(frame, state.position, EstimatorOptions(init=Velocity(0.0, 0.0)))
        seeded = estimate_velocity(frame, state.position, EstimatorOptions(coarse_grid=CoarseGrid()))
        self.assertLess(cold.objective, seeded.objective)
        self.assertLessEqual(abs(seeded.velocity.v_r - state.v_r), 1e-3)


class SliceTests(SimpleTestCase):

    def test_rejects_single_point(self):
        frame, state = toy_frame()
        with self.assertRaises(ConfigError):
            ml_slice(frame, state.position, Axis.RADIAL, 0.0, (-1.0, 1.0), 1)

    def test_slice_passes_through_objective(self):
        frame, state = toy_frame(noise=1e-3)
        table = ml_slice(frame, state.position, 'transverse', 3.1, (-10.0, 10.0), 5)
        for v, value in table.rows():
            self.assertAlmostEqual(value / ml_objective(frame, state.position, (3.1, v)), 1.0, places=12)
        self.assertIs(table.axis, Axis.TRANSVERSE)

    @tag('slow')
    def test_radial_peak_and_transverse_flattening(self):
        near_state = TargetState(10.0, math.pi / 3, 10.0, 8.0)
        near = full_scale_frame(near_state)
        radial = ml_slice(near, near_state.position, Axis.RADIAL, 8.0, (-10.0, 30.0), 401)
        self.assertLessEqual(abs(radial.peak - 10.0), 0.5)

        far_state = TargetState(80.0, math.pi / 3, 10.0, 8.0)
        far = full_scale_frame(far_state)
        near_lobe = ml_slice(near, near_state.position, Axis.TRANSVERSE, 10.0, (-10.0, 30.0), 401)
        far_lobe = ml_slice(far, far_state.position, Axis.TRANSVERSE, 10.0, (-10.0, 30.0), 401)
        self.assertLess(far_lobe.peak_to_mean, near_lobe.peak_to_mean)
