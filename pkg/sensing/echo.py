"""
Mono-static echo and downlink channel synthesis for one CPI.

Every column of the echo obeys y(n) = β (A ⊙ D_n) s(n) + z(n) with
A = a aᵀ and D_n = d_n d_nᵀ. Because (x xᵀ) ⊙ (y yᵀ) = (x ⊙ y)(x ⊙ y)ᵀ the
production path never forms the M×M matrices; ``dense=True`` keeps the
Hadamard form around as the reference.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import GeometryError
from .geometry import TargetState, antenna_distances, projected_velocities

logger = logging.getLogger(__name__)


def db_to_linear(value_db):
    return 10.0 ** (value_db / 10.0)


def dbm_to_watts(value_dbm):
    return 10.0 ** ((value_dbm - 30.0) / 10.0)


def watts_to_dbm(value_w):
    return 10.0 * math.log10(value_w) + 30.0


def noise_power(density_dbm_hz, bandwidth):
    """Total noise power σ² (W) from a density in dBm/Hz integrated over the bandwidth."""
    return dbm_to_watts(density_dbm_hz) * bandwidth


def radar_gain_power(wavelength, tx_gain, rx_gain, rcs):
    """|β|² from the radar range equation, G_t G_r λ² σ_RCS / (4π)³."""
    return tx_gain * rx_gain * wavelength ** 2 * rcs / (4 * math.pi) ** 3


def comm_gain(wavelength, tx_gain, rx_gain):
    """One-way free-space amplitude β_c = λ √(G_t G_r) / (4π), zero phase."""
    return wavelength * math.sqrt(tx_gain * rx_gain) / (4 * math.pi)


@dataclass(frozen=True)
class SensingLink:
    """Round-trip gain β and receiver noise power σ² (W) of the sensing path."""

    gain: complex
    noise_power: float
    tx_gain: float = 1.0
    rx_gain: float = 1.0
    rcs: float = 1.0

    def __post_init__(self):
        # σ² = 0 is accepted to produce noise-free frames
        if not (math.isfinite(self.noise_power) and self.noise_power >= 0):
            raise GeometryError(f"noise power must be non-negative, got {self.noise_power}")
        if min(self.tx_gain, self.rx_gain, self.rcs) <= 0:
            raise GeometryError("antenna gains and RCS must be positive")

    @classmethod
    def from_radar_equation(cls, wavelength, tx_gain, rx_gain, rcs, noise_power, phase=0.0):
        """
        Link whose amplitude follows the radar range equation

        Args:
            wavelength (float): Carrier wavelength (m)
            tx_gain (float): Linear transmit antenna gain
            rx_gain (float): Linear receive antenna gain
            rcs (float): Linear radar cross section
            noise_power (float): σ² in W
            phase (float): Phase of β in radians; only |β|² is physical

        Returns:
            SensingLink: The link
        """
        magnitude = math.sqrt(radar_gain_power(wavelength, tx_gain, rx_gain, rcs))
        return cls(
            gain=complex(magnitude * np.exp(1j * phase)),
            noise_power=noise_power,
            tx_gain=tx_gain,
            rx_gain=rx_gain,
            rcs=rcs,
        )

    def with_phase(self, phase):
        return SensingLink(
            gain=complex(abs(self.gain) * np.exp(1j * phase)),
            noise_power=self.noise_power,
            tx_gain=self.tx_gain,
            rx_gain=self.rx_gain,
            rcs=self.rcs,
        )


@dataclass(frozen=True, eq=False)
class EchoFrame:
    """Received echo Y and the transmit matrix S that produced it, both M×N."""

    received: np.ndarray
    transmit: np.ndarray
    symbol_period: float
    geometry: object

    def __post_init__(self):
        expected = (self.geometry.num_antennas,)
        if self.transmit.ndim != 2 or self.transmit.shape[:1] != expected:
            raise GeometryError(
                f"transmit matrix must be M x N with M={expected[0]}, got {self.transmit.shape}"
            )
        if self.received.shape != self.transmit.shape:
            raise GeometryError(
                f"received shape {self.received.shape} does not match transmit {self.transmit.shape}"
            )
        if not self.symbol_period > 0:
            raise GeometryError(f"symbol period must be positive, got {self.symbol_period}")

    @property
    def num_symbols(self):
        return self.transmit.shape[1]

    @property
    def transmit_power(self):
        """Average transmit power (1/N) Σ_n ‖s(n)‖²."""
        return float(np.mean(np.sum(np.abs(self.transmit) ** 2, axis=0)))

    def scaled(self, factor):
        """Frame with Y multiplied by a complex factor, S untouched."""
        return EchoFrame(self.received * factor, self.transmit, self.symbol_period, self.geometry)


def steering_vector(position, geom):
    """Near-field array response a_m = exp(-j 2π r_m / λ) / r_m."""
    distances = antenna_distances(position, geom)
    return np.exp(-1j * geom.wavenumber * distances) / distances


def doppler_vector(state, geom, n, symbol_period):
    """Doppler vector d_n with entries exp(-j 2π v_m n T_s / λ); unit modulus."""
    if int(n) != n or n < 0:
        raise GeometryError(f"symbol index must be a non-negative integer, got {n}")
    velocities = projected_velocities(state, geom)
    return np.exp(-1j * geom.wavenumber * velocities * (n * symbol_period))


def symbol_times(num_symbols, symbol_period):
    """Elapsed time n T_s of each symbol inside a CPI, n = 0..N-1."""
    return np.arange(num_symbols) * symbol_period


def doppler_matrix(state, geom, num_symbols, symbol_period):
    """All Doppler vectors of a CPI stacked as the columns of an M×N matrix."""
    velocities = projected_velocities(state, geom)
    times = symbol_times(num_symbols, symbol_period)
    return np.exp(-1j * geom.wavenumber * np.outer(velocities, times))


def channel_matrix(state, geom, n, symbol_period):
    """Dense round-trip channel H_n = (a aᵀ) ⊙ (d_n d_nᵀ); symmetric, not Hermitian."""
    a = steering_vector(state, geom)
    d = doppler_vector(state, geom, n, symbol_period)
    return np.outer(a, a) * np.outer(d, d)


def echo_column(state, geom, link, s_n, n, symbol_period, dense=False):
    """
    Noise-free echo of one transmitted snapshot

    Args:
        state (TargetState): True target state
        geom (ArrayGeometry): Array layout
        link (SensingLink): Round-trip gain
        s_n (ndarray): Transmit vector of length M
        n (int): Symbol index inside the CPI
        symbol_period (float): T_s in seconds
        dense (bool): Use the explicit Hadamard product instead of the rank-1 form

    Returns:
        ndarray: β H_n s(n)
    """
    s_n = np.asarray(s_n, dtype=complex)
    if dense:
        return link.gain * (channel_matrix(state, geom, n, symbol_period) @ s_n)
    b = steering_vector(state, geom) * doppler_vector(state, geom, n, symbol_period)
    return link.gain * b * (b @ s_n)


def signal_matrix(position, velocity, geom, transmit, symbol_period, dense=False):
    """
    Noise-free model X(η, v) = [H_1 s(1), …, H_N s(N)] for a transmit matrix

    Args:
        position: (r, θ) used for the steering vector and projections
        velocity: (v_r, v_θ) used for the Doppler vectors
        geom (ArrayGeometry): Array layout
        transmit (ndarray): S, M×N
        symbol_period (float): T_s in seconds
        dense (bool): Build every H_n explicitly (reference path)

    Returns:
        ndarray: X, M×N
    """
    state = TargetState.from_parts(position, velocity)
    transmit = np.asarray(transmit, dtype=complex)
    if dense:
        columns = [
            channel_matrix(state, geom, n, symbol_period) @ transmit[:, n]
            for n in range(transmit.shape[1])
        ]
        return np.stack(columns, axis=1)
    b = steering_vector(state, geom)[:, None] * doppler_matrix(
        state, geom, transmit.shape[1], symbol_period
    )
    return b * np.sum(b * transmit, axis=0)


def complex_noise(rng, shape, power):
    """Circular complex Gaussian samples, variance ``power`` per entry (power/2 per part)."""
    scale = math.sqrt(power / 2)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def generate_echo(state, geom, link, transmit, symbol_period, rng):
    """
    Received echo over one CPI, Y = β X + Z

    Args:
        state (TargetState): True target state, constant over the CPI
        geom (ArrayGeometry): Array layout
        link (SensingLink): Round-trip gain and noise power
        transmit (ndarray): S, M×N
        symbol_period (float): T_s in seconds
        rng (numpy.random.Generator): Noise source; one stream per frame

    Returns:
        EchoFrame: Y together with S
    """
    transmit = np.asarray(transmit, dtype=complex)
    received = link.gain * signal_matrix(state, state, geom, transmit, symbol_period)
    if link.noise_power > 0:
        received = received + complex_noise(rng, received.shape, link.noise_power)
    logger.debug(
        f"Synthesised echo {received.shape} at r={state.r:.4g} m, "
        f"v=({state.v_r:.4g}, {state.v_theta:.4g}) m/s"
    )
    return EchoFrame(received, transmit, symbol_period, geom)


def comm_channel(state, geom, beta_c, n, symbol_period):
    """
    Downlink channel row hᴴ(n) = β_c aᵀ diag(d_n)

    The returned vector is already the conjugated row, so the user receives
    ``comm_channel(...) @ s``.
    """
    return beta_c * steering_vector(state, geom) * doppler_vector(state, geom, n, symbol_period)


def comm_channel_matrix(state, geom, beta_c, num_symbols, symbol_period):
    """Columns are hᴴ(n) for n = 0..N-1."""
    return beta_c * steering_vector(state, geom)[:, None] * doppler_matrix(
        state, geom, num_symbols, symbol_period
    )
