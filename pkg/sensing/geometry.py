"""
Near-field geometry of a uniform linear array and a point target.

The array lies on the x-axis with its centre at the origin; the target sits at
(r cos θ, r sin θ). Antennas are numbered 1..M in prose and 0..M-1 in code, and
``antenna_offsets`` is the single source of truth for the mapping.
"""
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .exceptions import GeometryError

logger = logging.getLogger(__name__)


class Position(NamedTuple):
    """Polar position (r in metres, theta in radians) relative to the array centre."""
    r: float
    theta: float


class Velocity(NamedTuple):
    """Radial and transverse velocity (m/s) relative to the array centre."""
    v_r: float
    v_theta: float


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform linear array: antenna count, spacing (m) and carrier wavelength (m)."""

    num_antennas: int
    spacing: float
    wavelength: float

    def __post_init__(self):
        if int(self.num_antennas) != self.num_antennas or self.num_antennas < 2:
            raise GeometryError(f"num_antennas must be an integer >= 2, got {self.num_antennas}")
        if not (math.isfinite(self.spacing) and self.spacing > 0):
            raise GeometryError(f"spacing must be positive, got {self.spacing}")
        if not (math.isfinite(self.wavelength) and self.wavelength > 0):
            raise GeometryError(f"wavelength must be positive, got {self.wavelength}")

    @classmethod
    def half_wavelength(cls, num_antennas, wavelength):
        """Array with the usual λ/2 spacing."""
        return cls(num_antennas=num_antennas, spacing=wavelength / 2, wavelength=wavelength)

    @property
    def offsets(self):
        return antenna_offsets(self)

    @property
    def wavenumber(self):
        return 2 * math.pi / self.wavelength

    @property
    def half_aperture(self):
        """Distance from the array centre to the outermost antenna (m)."""
        return (self.num_antennas - 1) / 2 * self.spacing

    def require_outside(self, r):
        """
        Check that a target range lies strictly outside the aperture

        Args:
            r (float): Distance from the array centre (m)

        Raises:
            GeometryError: If r does not exceed the half aperture
        """
        if not (math.isfinite(r) and r > self.half_aperture):
            raise GeometryError(
                f"target range {r} m must exceed the half aperture {self.half_aperture:.6g} m"
            )


@dataclass(frozen=True)
class TargetState:
    """Polar position and velocity of the target (or the communication user)."""

    r: float
    theta: float
    v_r: float = 0.0
    v_theta: float = 0.0

    def __post_init__(self):
        check_angle(self.theta)
        if not (math.isfinite(self.r) and self.r > 0):
            raise GeometryError(f"range must be positive, got {self.r}")
        if not (math.isfinite(self.v_r) and math.isfinite(self.v_theta)):
            raise GeometryError(f"velocity must be finite, got ({self.v_r}, {self.v_theta})")

    @property
    def position(self):
        return Position(self.r, self.theta)

    @property
    def velocity(self):
        return Velocity(self.v_r, self.v_theta)

    @classmethod
    def from_parts(cls, position, velocity):
        return cls(position.r, position.theta, velocity.v_r, velocity.v_theta)

    @classmethod
    def from_cartesian(cls, point, velocity):
        """
        Build a polar state from Cartesian position and velocity

        Args:
            point (sequence): (x, y) in metres
            velocity (sequence): (v_x, v_y) in m/s

        Returns:
            TargetState: State with v_r = p·v / r and v_θ = (x v_y - y v_x) / r
        """
        x, y = float(point[0]), float(point[1])
        v_x, v_y = float(velocity[0]), float(velocity[1])
        r = math.hypot(x, y)
        if r == 0:
            raise GeometryError("target cannot sit at the array centre")
        return cls(
            r=r,
            theta=math.atan2(y, x),
            v_r=(x * v_x + y * v_y) / r,
            v_theta=(x * v_y - y * v_x) / r,
        )

    def to_cartesian(self):
        """Returns ((x, y), (v_x, v_y)) as numpy arrays."""
        radial = np.array([math.cos(self.theta), math.sin(self.theta)])
        transverse = np.array([-math.sin(self.theta), math.cos(self.theta)])
        return self.r * radial, self.v_r * radial + self.v_theta * transverse


def check_angle(theta):
    # Endfire is ambiguous for a ULA on the x-axis
    if not (math.isfinite(theta) and 0 < theta < math.pi):
        raise GeometryError(f"angle must lie in the open interval (0, pi), got {theta}")


def check_position(position, geom):
    """Validate a position against the angular domain and the aperture exclusion."""
    check_angle(position.theta)
    geom.require_outside(position.r)


def antenna_offsets(geom):
    """Normalised antenna offsets δ_m = m - 1 - (M - 1)/2, symmetric about zero."""
    return np.arange(geom.num_antennas, dtype=float) - (geom.num_antennas - 1) / 2


def _check_index(geom, m):
    if int(m) != m or not 0 <= m < geom.num_antennas:
        raise GeometryError(f"antenna index {m} outside 0..{geom.num_antennas - 1}")
    return int(m)


def antenna_distances(position, geom):
    """Distance r_m from every antenna to the target, law-of-cosines form."""
    check_position(position, geom)
    x = geom.offsets * geom.spacing
    r, theta = position.r, position.theta
    return np.sqrt(r ** 2 + x ** 2 - 2 * r * x * math.cos(theta))


def per_antenna_distance(state, geom, m):
    """
    Distance between antenna m and the target

    Args:
        state: Anything with ``r`` and ``theta`` (TargetState or Position)
        geom (ArrayGeometry): Array layout
        m (int): 0-based antenna index

    Returns:
        float: r_m in metres
    """
    m = _check_index(geom, m)
    return float(antenna_distances(state, geom)[m])


def projection_factors(position, geom):
    """
    Partial derivatives of every per-antenna velocity v_m w.r.t. (v_r, v_θ)

    They are the cosine and sine of the aspect angle seen from antenna m, so
    they depend on geometry only.

    Returns:
        tuple: (radial, transverse) arrays of length M
    """
    distances = antenna_distances(position, geom)
    x = geom.offsets * geom.spacing
    radial = (position.r - x * math.cos(position.theta)) / distances
    transverse = x * math.sin(position.theta) / distances
    return radial, transverse


def projected_velocities(state, geom):
    """Per-antenna velocity v_m = v_{r,m} + v_{θ,m} for every antenna."""
    radial, transverse = projection_factors(state, geom)
    return radial * state.v_r + transverse * state.v_theta


def velocity_projection(state, geom, m):
    """
    Velocity seen along the line from antenna m to the target

    Args:
        state (TargetState): Target position and velocity
        geom (ArrayGeometry): Array layout
        m (int): 0-based antenna index

    Returns:
        tuple: (v_m, ∂v_m/∂v_r, ∂v_m/∂v_θ)
    """
    m = _check_index(geom, m)
    radial, transverse = projection_factors(state, geom)
    d_radial, d_transverse = float(radial[m]), float(transverse[m])
    return d_radial * state.v_r + d_transverse * state.v_theta, d_radial, d_transverse


def propagate_state(position, velocity, dt, geom):
    """
    First-order prediction of the next CPI's position

    r' = r + v_r Δt and θ' = θ + v_θ Δt / r, with the old r in the angular step.
    Two half steps therefore match one full step in r exactly but not in θ.

    Args:
        position: Current (r, θ)
        velocity: Current (v_r, v_θ)
        dt (float): Elapsed time (s), positive
        geom (ArrayGeometry): Array the prediction must stay outside of

    Returns:
        Position: Predicted (r, θ)

    Raises:
        GeometryError: If the prediction leaves the valid domain
    """
    if not (math.isfinite(dt) and dt > 0):
        raise GeometryError(f"propagation interval must be positive, got {dt}")
    check_position(position, geom)
    predicted = Position(
        position.r + velocity.v_r * dt,
        position.theta + velocity.v_theta * dt / position.r,
    )
    try:
        check_position(predicted, geom)
    except GeometryError as e:
        logger.error(f"Predicted state ({predicted.r:.6g} m, {predicted.theta:.6g} rad) is invalid: {e}")
        raise
    return predicted


def cartesian_distance(a, b):
    """Euclidean distance (m) between two polar positions."""
    return math.hypot(
        a.r * math.cos(a.theta) - b.r * math.cos(b.theta),
        a.r * math.sin(a.theta) - b.r * math.sin(b.theta),
    )
