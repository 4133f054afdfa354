"""
Predictive beamformer, transmit frames and achievable rate.

With Doppler-frequency compensation (DFC) the beamformer at symbol n is
w(n) = √ρ diag(d_n*(v̂)) a*(η̂) with ρ = P_t / ‖a(η̂)‖²; without DFC it is
√ρ a*(η̂). Doppler entries have unit modulus, so ‖w(n)‖² = P_t for every n.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from sensing.echo import comm_channel_matrix, doppler_matrix, doppler_vector, steering_vector
from sensing.exceptions import GeometryError
from sensing.geometry import Position, TargetState, Velocity

logger = logging.getLogger(__name__)

# Unit-modulus QPSK constellation
QPSK = np.exp(1j * (np.pi / 4 + np.pi / 2 * np.arange(4)))


@dataclass(frozen=True)
class BeamformerSpec:
    """Where to point (η̂), which Doppler to pre-compensate (v̂), and at what power (W)."""

    position: Position
    velocity: Velocity
    power: float
    dfc: bool = True

    def __post_init__(self):
        if not (math.isfinite(self.power) and self.power > 0):
            raise GeometryError(f"transmit power must be positive, got {self.power}")

    @property
    def state(self):
        return TargetState.from_parts(self.position, self.velocity)


def _regularised_steering(spec, geom):
    a = steering_vector(spec.position, geom)
    rho = spec.power / float(np.vdot(a, a).real)
    return math.sqrt(rho) * a.conj()


def make_beamformer(spec, geom, n, symbol_period):
    """
    Beamformer snapshot for symbol n of a CPI

    Args:
        spec (BeamformerSpec): Predicted position/velocity, power and DFC switch
        geom (ArrayGeometry): Array layout
        n (int): Symbol index inside the CPI
        symbol_period (float): T_s in seconds

    Returns:
        ndarray: w(n), length M, with ‖w(n)‖² = P_t
    """
    w = _regularised_steering(spec, geom)
    if spec.dfc:
        w = w * doppler_vector(spec.state, geom, n, symbol_period).conj()
    return w


def beamformer_matrix(spec, geom, num_symbols, symbol_period):
    """All beamformer snapshots of a CPI as the columns of an M×N matrix."""
    w = _regularised_steering(spec, geom)[:, None]
    if spec.dfc:
        return w * doppler_matrix(spec.state, geom, num_symbols, symbol_period).conj()
    return np.repeat(w, num_symbols, axis=1)


def qpsk_symbols(rng, num_symbols):
    """Unit-modulus QPSK data symbols drawn from ``rng``."""
    return QPSK[rng.integers(0, 4, size=num_symbols)]


def transmit_frame(spec, geom, symbols, symbol_period):
    """
    Transmit matrix S with columns w(n) c_n

    Args:
        spec (BeamformerSpec): Beamformer design
        geom (ArrayGeometry): Array layout
        symbols (ndarray): Data symbols c, length N, all of unit modulus
        symbol_period (float): T_s in seconds

    Returns:
        ndarray: S, M×N, every column of power P_t
    """
    symbols = np.asarray(symbols, dtype=complex)
    if not np.allclose(np.abs(symbols), 1.0, rtol=0, atol=1e-12):
        raise GeometryError("data symbols must have unit modulus")
    return beamformer_matrix(spec, geom, len(symbols), symbol_period) * symbols[None, :]


def per_symbol_snr(true_state, geom, beta_c, transmit, noise_power, symbol_period):
    """Received SNR |hᴴ(n) s(n)|² / σ² of every symbol; |c_n| = 1 drops out."""
    if not noise_power > 0:
        raise GeometryError(f"noise power must be positive for a rate, got {noise_power}")
    transmit = np.asarray(transmit, dtype=complex)
    channel = comm_channel_matrix(true_state, geom, beta_c, transmit.shape[1], symbol_period)
    return np.abs(np.sum(channel * transmit, axis=0)) ** 2 / noise_power


def cpi_rate(true_state, geom, beta_c, transmit, noise_power, symbol_period):
    """
    Average achievable rate of one CPI in bits/s/Hz

    Args:
        true_state (TargetState): True user state during the CPI
        geom (ArrayGeometry): Array layout
        beta_c (complex): Downlink gain constant
        transmit (ndarray): S, M×N
        noise_power (float): σ² in W
        symbol_period (float): T_s in seconds

    Returns:
        float: (1/N) Σ_n log₂(1 + |hᴴ(n) s(n)|² / σ²)
    """
    snr = per_symbol_snr(true_state, geom, beta_c, transmit, noise_power, symbol_period)
    return float(np.mean(np.log2(1.0 + snr)))


def matched_rate(true_state, geom, beta_c, power, noise_power):
    """Closed form rate log₂(1 + P_t |β_c|² ‖a‖² / σ²) of the perfectly matched beamformer."""
    a = steering_vector(true_state, geom)
    return math.log2(1.0 + power * abs(beta_c) ** 2 * float(np.vdot(a, a).real) / noise_power)
