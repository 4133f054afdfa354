"""
Piecewise-linear user trajectories traversed at constant speed.
"""
import logging
import math

import numpy as np

from sensing.exceptions import ConfigError
from sensing.geometry import TargetState

logger = logging.getLogger(__name__)


class Trajectory:
    """
    Cartesian waypoint path with constant speed along every segment

    The true polar state at any time is computed exactly from the Cartesian
    position and velocity; at a waypoint the outgoing segment's velocity applies.
    """

    def __init__(self, waypoints, speed):
        points = np.asarray(waypoints, dtype=float)
        if points.ndim != 2 or points.shape[1] != 2 or len(points) < 2:
            raise ConfigError("trajectory.waypoints: need at least two (x, y) points")
        if not (math.isfinite(speed) and speed > 0):
            raise ConfigError(f"trajectory.speed: must be positive, got {speed}")
        segments = np.diff(points, axis=0)
        lengths = np.hypot(segments[:, 0], segments[:, 1])
        if np.any(lengths == 0):
            raise ConfigError("trajectory.waypoints: consecutive waypoints must differ")
        self.waypoints = points
        self.speed = float(speed)
        self._directions = segments / lengths[:, None]
        self._start_times = np.concatenate([[0.0], np.cumsum(lengths) / self.speed])

    @classmethod
    def from_state(cls, state, duration):
        """Straight line through ``state`` keeping its Cartesian velocity for ``duration`` seconds."""
        point, velocity = state.to_cartesian()
        speed = float(np.hypot(*velocity))
        if speed == 0:
            return StationaryTrajectory(state, duration)
        return cls([point, point + velocity * duration], speed)

    @property
    def duration(self):
        return float(self._start_times[-1])

    @property
    def corner_times(self):
        return self._start_times[1:-1].tolist()

    def _segment(self, t):
        if not 0 <= t <= self.duration * (1 + 1e-12):
            raise ConfigError(f"time {t} s outside the trajectory duration {self.duration} s")
        index = int(np.searchsorted(self._start_times, t, side='right')) - 1
        return min(index, len(self._directions) - 1)

    def cartesian_at(self, t):
        index = self._segment(t)
        direction = self._directions[index]
        point = self.waypoints[index] + direction * self.speed * (t - self._start_times[index])
        return point, direction * self.speed

    def state_at(self, t):
        """True polar state (r, θ, v_r, v_θ) at time t."""
        point, velocity = self.cartesian_at(t)
        return TargetState.from_cartesian(point, velocity)

    def velocity_jumps(self, t0, t1):
        """[(corner time, |Δv|)] for corners with t0 < t_c < t1."""
        jumps = []
        for index, corner in enumerate(self.corner_times, start=1):
            if t0 < corner < t1:
                change = (self._directions[index] - self._directions[index - 1]) * self.speed
                jumps.append((corner, float(np.hypot(*change))))
        return jumps


class StationaryTrajectory(Trajectory):
    """A user that does not move."""

    def __init__(self, state, duration):
        self._state = TargetState(state.r, state.theta, 0.0, 0.0)
        self._duration = float(duration)
        self.speed = 0.0
        point, _ = self._state.to_cartesian()
        self.waypoints = np.array([point, point])

    @property
    def duration(self):
        return self._duration

    @property
    def corner_times(self):
        return []

    def cartesian_at(self, t):
        point, velocity = self._state.to_cartesian()
        return point, velocity

    def state_at(self, t):
        return self._state

    def velocity_jumps(self, t0, t1):
        return []


def prediction_error_bound(trajectory, t, dt):
    """
    Bound on the position error one first-order prediction step adds

    For straight motion the neglected second-order terms are at most
    v² Δt² / r; a waypoint inside the step adds |Δv|·(t + Δt - t_c).

    Args:
        trajectory (Trajectory): True path
        t (float): Start of the step (s)
        dt (float): Step length (s)

    Returns:
        float: Bound in metres
    """
    state = trajectory.state_at(t)
    speed = trajectory.speed
    nearest = max(state.r - speed * dt, 1e-9)
    bound = speed ** 2 * dt ** 2 / nearest
    for corner, jump in trajectory.velocity_jumps(t, t + dt):
        bound += jump * (t + dt - corner)
    return bound
