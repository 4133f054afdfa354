"""
Concentrated maximum-likelihood estimation of radial and transverse velocity.

With the gain profiled out, β̂ = tr(Y Xᴴ) / ‖X‖²_F and the velocity is the
maximiser of

    g(Y, η, v) = |tr(Y Xᴴ(η, v))|² / ‖X(η, v)‖²_F

The gradient follows the complex chain rule,
∂g/∂v_i = 2 Re tr((∂g/∂Xᵀ)(∂X/∂v_i)) with
∂g/∂Xᵀ = (Θ Yᴴ - Ω Xᴴ) / ‖X‖⁴_F, Θ = tr(Y Xᴴ)‖X‖²_F and Ω = |tr(Y Xᴴ)|².
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from sensing.echo import doppler_vector, signal_matrix, steering_vector, symbol_times
from sensing.exceptions import ConfigError, DegenerateModelError, NonFiniteObjectiveError
from sensing.geometry import TargetState, Velocity, check_position, projection_factors

from .line_search import Direction, LineSearchOptions, Termination, ascend

logger = logging.getLogger(__name__)


class Axis(str, Enum):
    RADIAL = 'radial'
    TRANSVERSE = 'transverse'


@dataclass(frozen=True)
class CoarseGrid:
    """Square seeding grid over [-v_max, v_max]² with ``points`` samples per axis."""

    v_max: float = 30.0
    points: int = 31

    def __post_init__(self):
        if not self.v_max > 0:
            raise ConfigError(f"coarse grid v_max must be positive, got {self.v_max}")
        if self.points < 2:
            raise ConfigError(f"coarse grid needs at least 2 points per axis, got {self.points}")

    @property
    def axis(self):
        return np.linspace(-self.v_max, self.v_max, self.points)


@dataclass(frozen=True)
class EstimatorOptions:
    max_iters: int = 100
    grad_tol: float = 1e-8
    step_tol: float = 1e-4
    init: Velocity = Velocity(0.0, 0.0)
    line_search: LineSearchOptions = field(default_factory=LineSearchOptions)
    coarse_grid: CoarseGrid = None
    direction: Direction = Direction.QUASI_NEWTON

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be at least 1, got {self.max_iters}")
        if not (self.grad_tol > 0 and self.step_tol > 0):
            raise ConfigError("estimator tolerances must be positive")
        object.__setattr__(self, 'init', Velocity(*map(float, self.init)))
        object.__setattr__(self, 'direction', Direction(self.direction))

    def seeded(self, init):
        """Same options started from ``init`` without grid seeding."""
        return EstimatorOptions(
            max_iters=self.max_iters,
            grad_tol=self.grad_tol,
            step_tol=self.step_tol,
            init=Velocity(*init),
            line_search=self.line_search,
            coarse_grid=None,
            direction=self.direction,
        )


@dataclass
class EstimateResult:
    velocity: Velocity
    beta: complex
    objective_trace: list
    iterations: int
    termination: Termination
    velocity_trace: list = field(default_factory=list)
    start: Velocity = None

    @property
    def objective(self):
        return self.objective_trace[-1]


@dataclass(frozen=True)
class SliceTable:
    """Objective sampled along one velocity axis with the other held fixed."""

    axis: Axis
    fixed_other: float
    velocities: np.ndarray
    values: np.ndarray

    @property
    def peak(self):
        return float(self.velocities[int(np.argmax(self.values))])

    @property
    def peak_to_mean(self):
        return float(np.max(self.values) / np.mean(self.values))

    def rows(self):
        return list(zip(self.velocities.tolist(), self.values.tolist()))


class ConcentratedLikelihood:
    """
    Profiled likelihood of one echo frame at a fixed (assumed) position

    The position is trusted as given; only the velocity is searched. Geometry
    dependent pieces (steering vector, projection factors) are computed once.
    """

    def __init__(self, frame, position, dense=False):
        check_position(position, frame.geometry)
        self.frame = frame
        self.position = position
        self.dense = dense
        geom = frame.geometry
        self._wavenumber = geom.wavenumber
        self._steering = steering_vector(position, geom)
        self._radial, self._transverse = projection_factors(position, geom)
        self._times = symbol_times(frame.num_symbols, frame.symbol_period)
        self._received = np.asarray(frame.received, dtype=complex)
        self._transmit = np.asarray(frame.transmit, dtype=complex)

    def _basis(self, velocity):
        # B = a ⊙ d_n for every column n
        v_r, v_theta = velocity
        projected = self._radial * v_r + self._transverse * v_theta
        return self._steering[:, None] * np.exp(
            -1j * self._wavenumber * np.outer(projected, self._times)
        )

    def model(self, velocity):
        """Noise-free model X(η, v), M×N."""
        if self.dense:
            return signal_matrix(
                self.position, Velocity(*velocity), self.frame.geometry,
                self._transmit, self.frame.symbol_period, dense=True,
            )
        basis = self._basis(velocity)
        return basis * np.sum(basis * self._transmit, axis=0)

    def _correlate(self, model):
        # tr(Y Xᴴ) and ‖X‖²_F
        correlation = np.vdot(model, self._received)
        energy = float(np.vdot(model, model).real)
        if energy == 0:
            raise DegenerateModelError("model energy ‖X‖_F is zero; the transmit matrix is all zeros")
        return correlation, energy

    def objective(self, velocity):
        correlation, energy = self._correlate(self.model(velocity))
        value = abs(correlation) ** 2 / energy
        if not math.isfinite(value):
            raise NonFiniteObjectiveError(f"objective is {value} at v={tuple(velocity)}")
        return value

    def beta(self, velocity):
        correlation, energy = self._correlate(self.model(velocity))
        return complex(correlation / energy)

    def _model_derivatives(self, velocity):
        """X together with ∂X/∂v_r and ∂X/∂v_θ."""
        if self.dense:
            return self._dense_derivatives(velocity)
        basis = self._basis(velocity)
        combined = np.sum(basis * self._transmit, axis=0)
        model = basis * combined
        derivatives = []
        for factors in (self._radial, self._transverse):
            # ∂d_{n,m}/∂v_i = -j (2π/λ) n T_s (∂v_m/∂v_i) d_{n,m}
            d_basis = basis * (-1j * self._wavenumber * np.outer(factors, self._times))
            derivatives.append(d_basis * combined + basis * np.sum(d_basis * self._transmit, axis=0))
        return model, derivatives

    def _dense_derivatives(self, velocity):
        geom = self.frame.geometry
        state = TargetState.from_parts(self.position, Velocity(*velocity))
        outer_steering = np.outer(self._steering, self._steering)
        model = np.empty_like(self._transmit)
        derivatives = [np.empty_like(self._transmit), np.empty_like(self._transmit)]
        for n in range(self.frame.num_symbols):
            d = doppler_vector(state, geom, n, self.frame.symbol_period)
            s_n = self._transmit[:, n]
            model[:, n] = (outer_steering * np.outer(d, d)) @ s_n
            for i, factors in enumerate((self._radial, self._transverse)):
                d_d = -1j * self._wavenumber * n * self.frame.symbol_period * factors * d
                d_channel = outer_steering * (np.outer(d_d, d) + np.outer(d, d_d))
                derivatives[i][:, n] = d_channel @ s_n
        return model, derivatives

    def value_and_gradient(self, velocity):
        """
        Objective and its analytic gradient

        Args:
            velocity (sequence): (v_r, v_θ) in m/s

        Returns:
            tuple: (g, ndarray([∂g/∂v_r, ∂g/∂v_θ]))
        """
        model, derivatives = self._model_derivatives(velocity)
        correlation, energy = self._correlate(model)
        omega = abs(correlation) ** 2
        theta = correlation * energy
        # Entry (m, n) of this matrix is entry (n, m) of ∂g/∂Xᵀ
        weight = (theta * self._received.conj() - omega * model.conj()) / energy ** 2
        # tr((∂g/∂Xᵀ) ∂X/∂v_i) evaluated as an elementwise sum
        gradient = np.array([2 * np.real(np.sum(weight * d_model)) for d_model in derivatives])
        value = omega / energy
        if not (math.isfinite(value) and np.all(np.isfinite(gradient))):
            raise NonFiniteObjectiveError(
                f"objective {value} / gradient {gradient} not finite at v={tuple(velocity)}"
            )
        return value, gradient

    def gradient(self, velocity):
        return self.value_and_gradient(velocity)[1]


def ml_objective(frame, position, velocity, dense=False):
    """Concentrated likelihood g(Y, η, v) >= 0."""
    return ConcentratedLikelihood(frame, position, dense=dense).objective(velocity)


def estimate_beta(frame, position, velocity, dense=False):
    """Least-squares gain β̂ = tr(Y Xᴴ) / ‖X‖²_F for a given velocity."""
    return ConcentratedLikelihood(frame, position, dense=dense).beta(velocity)


def ml_gradient(frame, position, velocity, dense=False):
    """Analytic gradient (∂g/∂v_r, ∂g/∂v_θ)."""
    return ConcentratedLikelihood(frame, position, dense=dense).gradient(velocity)


def _axis_point(axis, value, fixed_other):
    if Axis(axis) is Axis.RADIAL:
        return Velocity(value, fixed_other)
    return Velocity(fixed_other, value)


def ml_slice(frame, position, axis, fixed_other, v_range, points):
    """
    Objective along one velocity axis, the other component held fixed

    Args:
        frame (EchoFrame): Echo to evaluate
        position: Assumed (r, θ)
        axis (Axis): Which component varies
        fixed_other (float): Value of the other component (m/s)
        v_range (tuple): (lo, hi) in m/s
        points (int): Number of samples, at least 2

    Returns:
        SliceTable: Sampled velocities and objective values
    """
    if points < 2:
        raise ConfigError(f"a slice needs at least 2 points, got {points}")
    likelihood = ConcentratedLikelihood(frame, position)
    velocities = np.linspace(v_range[0], v_range[1], points)
    values = np.array([
        likelihood.objective(_axis_point(axis, v, fixed_other)) for v in velocities
    ])
    return SliceTable(Axis(axis), float(fixed_other), velocities, values)


def grid_search(likelihood, grid):
    """
    Best point of a square grid

    Args:
        likelihood (ConcentratedLikelihood): Objective to scan
        grid (CoarseGrid): Grid description

    Returns:
        tuple: (Velocity of the best point, its objective value)
    """
    axis = grid.axis
    best, best_value = None, -math.inf
    for v_r in axis:
        for v_theta in axis:
            value = likelihood.objective((v_r, v_theta))
            if value > best_value:
                best, best_value = Velocity(float(v_r), float(v_theta)), value
    return best, best_value


def curvature(frame, position, velocity, axis, h=0.1):
    """Central second difference of g along one velocity axis at ``velocity``."""
    likelihood = ConcentratedLikelihood(frame, position)
    v_r, v_theta = velocity
    if Axis(axis) is Axis.RADIAL:
        step = np.array([h, 0.0])
    else:
        step = np.array([0.0, h])
    centre = np.array([v_r, v_theta], dtype=float)
    return (
        likelihood.objective(centre + step)
        - 2 * likelihood.objective(centre)
        + likelihood.objective(centre - step)
    ) / h ** 2


def estimate_velocity(frame, position, options=None, dense=False):
    """
    Maximum-likelihood velocity for one echo frame

    The ascent is local: without ``coarse_grid`` it climbs the lobe that holds
    ``init``, which for a distant start is usually a sidelobe.

    Args:
        frame (EchoFrame): Received echo and its transmit matrix
        position: Assumed (predicted) position (r, θ); never re-estimated
        options (EstimatorOptions): Iteration limits, tolerances, seeding
        dense (bool): Evaluate with the dense reference model

    Returns:
        EstimateResult: v̂, β̂, objective trace and termination reason
    """
    options = options or EstimatorOptions()
    likelihood = ConcentratedLikelihood(frame, position, dense=dense)

    start = options.init
    if options.coarse_grid is not None:
        start, seed_value = grid_search(likelihood, options.coarse_grid)
        logger.debug(f"Coarse grid seed v=({start.v_r:.3f}, {start.v_theta:.3f}) g={seed_value:.6g}")

    result = ascend(
        likelihood.value_and_gradient,
        likelihood.objective,
        np.array(start, dtype=float),
        max_iters=options.max_iters,
        grad_tol=options.grad_tol,
        step_tol=options.step_tol,
        options=options.line_search,
        direction=options.direction,
    )
    velocity = Velocity(float(result.x[0]), float(result.x[1]))
    logger.debug(
        f"Estimated v=({velocity.v_r:.6f}, {velocity.v_theta:.6f}) m/s after "
        f"{result.iterations} iterations ({result.termination.value})"
    )
    return EstimateResult(
        velocity=velocity,
        beta=likelihood.beta(velocity),
        objective_trace=list(result.values),
        iterations=result.iterations,
        termination=result.termination,
        velocity_trace=[Velocity(float(x[0]), float(x[1])) for x in result.iterates],
        start=Velocity(*start),
    )
