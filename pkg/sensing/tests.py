import math

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st
from scipy.constants import c as SPEED_OF_LIGHT

from .echo import (
    EchoFrame, SensingLink, channel_matrix, comm_channel, comm_channel_matrix, complex_noise,
    db_to_linear, doppler_matrix, doppler_vector, echo_column, generate_echo, noise_power,
    radar_gain_power, signal_matrix, steering_vector,
)
from .exceptions import EstimationFailure, GeometryError
from .geometry import (
    ArrayGeometry, Position, TargetState, Velocity, antenna_offsets, per_antenna_distance,
    projection_factors, propagate_state, velocity_projection,
)
from .streams import Stream, derive_stream, trial_seed

WAVELENGTH_28GHZ = SPEED_OF_LIGHT / 28e9


@st.composite
def scenes(draw, max_antennas=16):
    """Random small array with a valid target in front of it."""
    num_antennas = draw(st.integers(min_value=2, max_value=max_antennas))
    wavelength = draw(st.floats(min_value=0.005, max_value=0.1))
    spacing = wavelength / 2 * draw(st.floats(min_value=0.5, max_value=2.0))
    geom = ArrayGeometry(num_antennas, spacing, wavelength)
    r = geom.half_aperture * draw(st.floats(min_value=1.1, max_value=50.0)) + 0.05
    theta = draw(st.floats(min_value=0.05, max_value=math.pi - 0.05))
    v_r = draw(st.floats(min_value=-30, max_value=30))
    v_theta = draw(st.floats(min_value=-30, max_value=30))
    return geom, TargetState(r, theta, v_r, v_theta)


def unit_spaced(num_antennas):
    return ArrayGeometry(num_antennas, spacing=1.0, wavelength=WAVELENGTH_28GHZ)


class ArrayGeometryTests(SimpleTestCase):

    def test_offsets_even(self):
        np.testing.assert_array_equal(antenna_offsets(unit_spaced(4)), [-1.5, -0.5, 0.5, 1.5])

    def test_offsets_odd_have_centre_element(self):
        np.testing.assert_array_equal(antenna_offsets(unit_spaced(3)), [-1.0, 0.0, 1.0])

    def test_offsets_large_array(self):
        offsets = ArrayGeometry.half_wavelength(512, WAVELENGTH_28GHZ).offsets
        self.assertEqual(len(offsets), 512)
        self.assertEqual(offsets.min(), -255.5)
        self.assertEqual(offsets.max(), 255.5)
        self.assertEqual(offsets.sum(), 0.0)

    def test_rejects_invalid_layout(self):
        with self.assertRaises(GeometryError):
            ArrayGeometry(1, 0.5, 0.01)
        with self.assertRaises(GeometryError):
            ArrayGeometry(4, 0.0, 0.01)
        with self.assertRaises(GeometryError):
            ArrayGeometry(4, 0.5, -0.01)

    def test_target_state_rejects_endfire(self):
        with self.assertRaises(GeometryError):
            TargetState(10.0, 0.0)
        with self.assertRaises(GeometryError):
            TargetState(10.0, math.pi)

    def test_target_inside_aperture_is_rejected(self):
        geom = unit_spaced(5)
        with self.assertRaises(GeometryError):
            per_antenna_distance(TargetState(2.0, math.pi / 2), geom, 0)


class DistanceTests(SimpleTestCase):

    def test_broadside_centre_element(self):
        geom = unit_spaced(5)
        state = TargetState(10.0, math.pi / 2)
        self.assertEqual(per_antenna_distance(state, geom, 2), 10.0)
        self.assertAlmostEqual(per_antenna_distance(state, geom, 0), math.sqrt(104), places=12)

    def test_nearly_collinear(self):
        # θ = 0 is outside the domain; approach it instead
        geom = unit_spaced(3)
        state = TargetState(10.0, 1e-9)
        self.assertAlmostEqual(per_antenna_distance(state, geom, 2), 9.0, places=9)

    def test_law_of_cosines(self):
        geom = unit_spaced(5)
        state = TargetState(10.0, math.pi / 3)
        self.assertAlmostEqual(per_antenna_distance(state, geom, 4), math.sqrt(84), places=12)

    def test_rejects_index_out_of_range(self):
        geom = unit_spaced(5)
        with self.assertRaises(GeometryError):
            per_antenna_distance(TargetState(10.0, 1.0), geom, 5)
        with self.assertRaises(GeometryError):
            per_antenna_distance(TargetState(10.0, 1.0), geom, -1)

    @given(scenes())
    @settings(max_examples=100, deadline=None)
    def test_mirror_symmetry(self, scene):
        geom, state = scene
        mirrored = TargetState(state.r, math.pi - state.theta)
        last = geom.num_antennas - 1
        for m in range(geom.num_antennas):
            self.assertAlmostEqual(
                per_antenna_distance(state, geom, m),
                per_antenna_distance(mirrored, geom, last - m),
                delta=1e-9 * state.r,
            )


class VelocityProjectionTests(SimpleTestCase):

    def test_centre_element_at_broadside(self):
        geom = unit_spaced(5)
        v_m, d_r, d_theta = velocity_projection(TargetState(10.0, math.pi / 2, 3.0, 7.0), geom, 2)
        self.assertEqual((d_r, d_theta), (1.0, 0.0))
        self.assertEqual(v_m, 3.0)

    def test_hand_evaluated_partials(self):
        geom = unit_spaced(5)
        v_m, d_r, d_theta = velocity_projection(TargetState(10.0, math.pi / 3, 10.0, 8.0), geom, 4)
        self.assertAlmostEqual(d_r, 9 / math.sqrt(84), places=12)
        self.assertAlmostEqual(d_theta, math.sqrt(3) / math.sqrt(84), places=12)
        self.assertAlmostEqual(d_r, 0.98198, places=5)
        self.assertAlmostEqual(d_theta, 0.18898, places=5)
        self.assertAlmostEqual(v_m, 10 * d_r + 8 * d_theta, places=12)

    def test_far_field_limit(self):
        geom = unit_spaced(5)
        _, d_r, d_theta = velocity_projection(TargetState(1e6, 1.0), geom, 0)
        self.assertAlmostEqual(d_r, 1.0, delta=1e-5)
        self.assertAlmostEqual(d_theta, 0.0, delta=1e-5)

    @given(scenes())
    @settings(max_examples=100, deadline=None)
    def test_partials_are_unit_norm(self, scene):
        geom, state = scene
        radial, transverse = projection_factors(state, geom)
        np.testing.assert_allclose(radial ** 2 + transverse ** 2, 1.0, rtol=0, atol=1e-12)

    @given(scenes())
    @settings(max_examples=50, deadline=None)
    def test_transverse_partial_shrinks_with_range(self, scene):
        geom, state = scene
        m = 0  # never the centre element since M >= 2
        _, _, near = velocity_projection(state, geom, m)
        _, _, far = velocity_projection(TargetState(2 * state.r, state.theta), geom, m)
        self.assertLess(abs(far), abs(near))


class PropagateStateTests(SimpleTestCase):

    def setUp(self):
        self.geom = ArrayGeometry.half_wavelength(512, WAVELENGTH_28GHZ)

    def test_zero_velocity_is_identity(self):
        position = Position(10.0, math.pi / 3)
        self.assertEqual(propagate_state(position, Velocity(0.0, 0.0), 0.002, self.geom), position)

    def test_one_cpi_step(self):
        predicted = propagate_state(Position(10.0, math.pi / 3), Velocity(10.0, 8.0), 0.002, self.geom)
        self.assertAlmostEqual(predicted.r, 10.02, places=12)
        self.assertAlmostEqual(predicted.theta, math.pi / 3 + 0.0016, places=12)

    def test_radial_shrink(self):
        predicted = propagate_state(Position(10.0, math.pi / 2), Velocity(-10.0, 0.0), 0.002, self.geom)
        self.assertAlmostEqual(predicted.r, 9.98, places=12)
        self.assertEqual(predicted.theta, math.pi / 2)

    def test_half_steps_match_in_range(self):
        position, velocity = Position(10.0, 1.0), Velocity(5.0, 3.0)
        half = propagate_state(propagate_state(position, velocity, 0.001, self.geom), velocity, 0.001, self.geom)
        full = propagate_state(position, velocity, 0.002, self.geom)
        self.assertAlmostEqual(half.r, full.r, places=12)

    def test_rejects_prediction_into_aperture(self):
        with self.assertRaises(GeometryError):
            propagate_state(Position(1.4, math.pi / 2), Velocity(-100.0, 0.0), 0.002, self.geom)

    def test_rejects_non_positive_interval(self):
        with self.assertRaises(GeometryError):
            propagate_state(Position(10.0, 1.0), Velocity(1.0, 1.0), 0.0, self.geom)


class CartesianTests(SimpleTestCase):

    @given(scenes())
    @settings(max_examples=50, deadline=None)
    def test_cartesian_conversion_is_consistent(self, scene):
        _, state = scene
        point, velocity = state.to_cartesian()
        back = TargetState.from_cartesian(point, velocity)
        self.assertAlmostEqual(back.r, state.r, delta=1e-9 * state.r)
        self.assertAlmostEqual(back.theta, state.theta, places=9)
        self.assertAlmostEqual(back.v_r, state.v_r, places=9)
        self.assertAlmostEqual(back.v_theta, state.v_theta, places=9)

    def test_transverse_motion(self):
        state = TargetState.from_cartesian((0.0, 10.0), (-5.0, 0.0))
        self.assertAlmostEqual(state.theta, math.pi / 2)
        self.assertAlmostEqual(state.v_r, 0.0)
        self.assertAlmostEqual(state.v_theta, 5.0)


class LinkBudgetTests(SimpleTestCase):

    def test_rcs_conversion(self):
        self.assertAlmostEqual(db_to_linear(-23.0), 5.011872336e-3, places=12)

    def test_noise_power(self):
        # -174 dBm/Hz over 100 kHz is -124 dBm
        self.assertAlmostEqual(noise_power(-174.0, 100e3), 10 ** (-124 / 10) * 1e-3, delta=1e-30)

    def test_radar_gain_magnitude(self):
        link = SensingLink.from_radar_equation(WAVELENGTH_28GHZ, 1.0, 1.0, 0.5, 1e-15, phase=0.7)
        expected = WAVELENGTH_28GHZ ** 2 * 0.5 / (4 * math.pi) ** 3
        self.assertAlmostEqual(abs(link.gain) ** 2 / expected, 1.0, places=12)
        self.assertAlmostEqual(abs(link.with_phase(2.0).gain) / abs(link.gain), 1.0, places=12)
        self.assertAlmostEqual(radar_gain_power(WAVELENGTH_28GHZ, 1.0, 1.0, 0.5) / expected, 1.0, places=12)

    def test_negative_noise_is_rejected(self):
        with self.assertRaises(GeometryError):
            SensingLink(gain=1.0, noise_power=-1.0)


class SteeringAndDopplerTests(SimpleTestCase):

    def test_modulus_is_inverse_distance(self):
        geom = unit_spaced(5)
        state = TargetState(10.0, 1.1)
        a = steering_vector(state, geom)
        distances = [per_antenna_distance(state, geom, m) for m in range(5)]
        np.testing.assert_allclose(np.abs(a), 1 / np.array(distances), rtol=1e-14)

    def test_broadside_symmetry(self):
        geom = ArrayGeometry.half_wavelength(9, WAVELENGTH_28GHZ)
        a = steering_vector(Position(3.0, math.pi / 2), geom)
        np.testing.assert_allclose(a, a[::-1], rtol=1e-12)

    def test_centre_element_value(self):
        geom = ArrayGeometry.half_wavelength(5, WAVELENGTH_28GHZ)
        a = steering_vector(Position(10.0, math.pi / 2), geom)
        expected = 0.1 * np.exp(-1j * 2 * math.pi * 10 / WAVELENGTH_28GHZ)
        self.assertAlmostEqual(abs(a[2] - expected), 0.0, delta=1e-9)

    def test_static_target_and_first_symbol_have_no_doppler(self):
        geom = unit_spaced(5)
        np.testing.assert_array_equal(doppler_vector(TargetState(10.0, 1.0), geom, 50, 1e-5), np.ones(5))
        np.testing.assert_array_equal(doppler_vector(TargetState(10.0, 1.0, 10, 8), geom, 0, 1e-5), np.ones(5))

    def test_centre_element_doppler(self):
        geom = ArrayGeometry.half_wavelength(5, WAVELENGTH_28GHZ)
        d = doppler_vector(TargetState(10.0, math.pi / 3, 10.0, 8.0), geom, 100, 1e-5)
        expected = np.exp(-1j * 2 * math.pi * 10 * 1e-3 / WAVELENGTH_28GHZ)
        self.assertAlmostEqual(abs(d[2] - expected), 0.0, delta=1e-9)
        np.testing.assert_allclose(np.abs(d), 1.0, rtol=0, atol=1e-15)

    def test_rejects_negative_symbol_index(self):
        with self.assertRaises(GeometryError):
            doppler_vector(TargetState(10.0, 1.0), unit_spaced(3), -1, 1e-5)

    def test_doppler_matrix_columns(self):
        geom = unit_spaced(4)
        state = TargetState(10.0, 1.0, 3.0, -2.0)
        matrix = doppler_matrix(state, geom, 6, 1e-4)
        for n in range(6):
            np.testing.assert_allclose(matrix[:, n], doppler_vector(state, geom, n, 1e-4), rtol=1e-13)


class EchoTests(SimpleTestCase):

    @given(scenes(), st.integers(min_value=0, max_value=200), st.integers(min_value=0, max_value=2 ** 32))
    @settings(max_examples=100, deadline=None)
    def test_rank_one_matches_hadamard_form(self, scene, n, seed):
        geom, state = scene
        rng = np.random.default_rng(seed)
        s_n = complex_noise(rng, geom.num_antennas, 1.0)
        link = SensingLink(gain=0.3 - 0.4j, noise_power=0.0)
        factored = echo_column(state, geom, link, s_n, n, 1e-5)
        dense = echo_column(state, geom, link, s_n, n, 1e-5, dense=True)
        self.assertLessEqual(np.linalg.norm(factored - dense), 1e-12 * np.linalg.norm(dense))

    def test_zero_transmit_gives_zero_echo(self):
        geom = unit_spaced(4)
        link = SensingLink(gain=1.0, noise_power=0.0)
        column = echo_column(TargetState(10.0, 1.0), geom, link, np.zeros(4), 3, 1e-5)
        np.testing.assert_array_equal(column, np.zeros(4))

    def test_channel_is_symmetric_not_hermitian(self):
        geom = unit_spaced(4)
        h = channel_matrix(TargetState(10.0, 1.0, 3.0, 4.0), geom, 7, 1e-4)
        np.testing.assert_allclose(h, h.T, rtol=1e-14)
        self.assertFalse(np.allclose(h, h.conj().T))

    def test_dense_signal_matrix_matches(self):
        geom = unit_spaced(6)
        rng = np.random.default_rng(3)
        transmit = complex_noise(rng, (6, 8), 1.0)
        position, velocity = Position(12.0, 1.2), Velocity(4.0, -6.0)
        np.testing.assert_allclose(
            signal_matrix(position, velocity, geom, transmit, 1e-4),
            signal_matrix(position, velocity, geom, transmit, 1e-4, dense=True),
            rtol=1e-12, atol=1e-18,
        )

    def test_noise_free_echo_is_scaled_model(self):
        geom = unit_spaced(4)
        state = TargetState(10.0, 1.0, 3.0, 4.0)
        transmit = complex_noise(np.random.default_rng(0), (4, 5), 1.0)
        link = SensingLink(gain=2.0j, noise_power=0.0)
        frame = generate_echo(state, geom, link, transmit, 1e-4, np.random.default_rng(1))
        np.testing.assert_allclose(frame.received, 2.0j * signal_matrix(state, state, geom, transmit, 1e-4))

    def test_noise_draws_are_reproducible(self):
        geom = unit_spaced(4)
        state = TargetState(10.0, 1.0, 3.0, 4.0)
        transmit = complex_noise(np.random.default_rng(0), (4, 5), 1.0)
        link = SensingLink(gain=1.0, noise_power=1e-3)
        first = generate_echo(state, geom, link, transmit, 1e-4, derive_stream(7, Stream.ECHO_NOISE, 0))
        second = generate_echo(state, geom, link, transmit, 1e-4, derive_stream(7, Stream.ECHO_NOISE, 0))
        np.testing.assert_array_equal(first.received, second.received)

    def test_noise_variance(self):
        samples = complex_noise(np.random.default_rng(11), 200_000, 2.5)
        self.assertAlmostEqual(np.mean(np.abs(samples) ** 2) / 2.5, 1.0, delta=0.02)

    def test_frame_shape_mismatch(self):
        geom = unit_spaced(4)
        with self.assertRaises(GeometryError):
            EchoFrame(np.zeros((4, 3), complex), np.zeros((4, 2), complex), 1e-5, geom)
        with self.assertRaises(GeometryError):
            EchoFrame(np.zeros((3, 2), complex), np.zeros((3, 2), complex), 1e-5, geom)

    def test_transmit_power(self):
        geom = unit_spaced(2)
        frame = EchoFrame(np.zeros((2, 2), complex), np.array([[1, 0], [1, 2j]]), 1e-5, geom)
        self.assertAlmostEqual(frame.transmit_power, 3.0)


class CommChannelTests(SimpleTestCase):

    def setUp(self):
        self.geom = ArrayGeometry.half_wavelength(16, WAVELENGTH_28GHZ)
        self.state = TargetState(2.0, 1.1, 6.0, -9.0)
        self.beta_c = 0.01 * np.exp(0.4j)

    def test_matrix_columns_are_rows(self):
        geom = unit_spaced(4)
        state = TargetState(10.0, 1.0, 3.0, 4.0)
        matrix = comm_channel_matrix(state, geom, 0.01, 5, 1e-4)
        for n in range(5):
            np.testing.assert_allclose(matrix[:, n], comm_channel(state, geom, 0.01, n, 1e-4), rtol=1e-13)

    def test_entry_magnitude_is_spreading_loss(self):
        h = comm_channel(self.state, self.geom, self.beta_c, 7, 1e-5)
        distances = np.array([per_antenna_distance(self.state, self.geom, m) for m in range(16)])
        np.testing.assert_allclose(np.abs(h), abs(self.beta_c) / distances, rtol=1e-12)

    def test_conjugate_steering_is_matched_at_first_symbol(self):
        h = comm_channel(self.state, self.geom, self.beta_c, 0, 1e-5)
        a = steering_vector(self.state, self.geom)
        energy = float(np.vdot(a, a).real)
        self.assertAlmostEqual(abs(h @ a.conj()) / (abs(self.beta_c) * energy), 1.0, places=12)

    def test_static_user_has_constant_channel(self):
        static = TargetState(self.state.r, self.state.theta)
        first = comm_channel(static, self.geom, self.beta_c, 0, 1e-5)
        for n in (1, 17, 199):
            np.testing.assert_array_equal(comm_channel(static, self.geom, self.beta_c, n, 1e-5), first)


class StreamTests(SimpleTestCase):

    def test_streams_are_addressed_not_sequential(self):
        a = derive_stream(42, Stream.ECHO_NOISE, 3).standard_normal(4)
        derive_stream(42, Stream.ECHO_NOISE, 2).standard_normal(100)
        b = derive_stream(42, Stream.ECHO_NOISE, 3).standard_normal(4)
        np.testing.assert_array_equal(a, b)

    def test_streams_differ_by_kind_and_index(self):
        base = derive_stream(42, Stream.ECHO_NOISE, 3).standard_normal(4)
        self.assertFalse(np.array_equal(base, derive_stream(42, Stream.SYMBOLS, 3).standard_normal(4)))
        self.assertFalse(np.array_equal(base, derive_stream(42, Stream.ECHO_NOISE, 4).standard_normal(4)))
        self.assertFalse(np.array_equal(base, derive_stream(43, Stream.ECHO_NOISE, 3).standard_normal(4)))

    def test_trial_seeds(self):
        self.assertEqual(trial_seed(2 ** 64 - 1, 0), 2 ** 64 - 1)
        seeds = [trial_seed(5, t) for t in range(20)]
        self.assertEqual(len(set(seeds)), 20)
        self.assertEqual(seeds[:10], [trial_seed(5, t) for t in range(10)])
        self.assertTrue(all(0 <= s < 2 ** 64 for s in seeds))


class ExceptionTests(SimpleTestCase):

    def test_estimation_failure_names_the_cpi(self):
        error = EstimationFailure(17, "line search failed")
        self.assertEqual(error.cpi_index, 17)
        self.assertIn("CPI 17", str(error))
