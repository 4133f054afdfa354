"""
Pilot-free predictive beamforming loop.

CPI 0 is sensing only: the array points a beam without Doppler compensation at
the reported initial position η̂₀ and estimates v̂₀. From CPI 1 on, every CPI
transmits data with the beamformer designed from (η̂_l, v̂_{l-1}), estimates v̂_l
from the echo of that same transmission and predicts η̂_{l+1}.
"""
import logging
import math
from dataclasses import dataclass, field

from estimation.estimator import EstimatorOptions, estimate_velocity
from sensing.echo import SensingLink, generate_echo
from sensing.exceptions import EstimationFailure, SensingError
from sensing.geometry import Position, Velocity, cartesian_distance, propagate_state
from sensing.streams import Stream, derive_stream

from .beamformer import BeamformerSpec, beamformer_matrix, cpi_rate, qpsk_symbols, transmit_frame
from .trajectory import prediction_error_bound

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrackingScenario:
    """Everything one tracking run needs, already in SI units."""

    geometry: object
    trajectory: object
    num_symbols: int
    symbol_period: float
    power: float
    link: SensingLink
    comm_gain: complex
    noise_power: float
    seed: int
    num_cpis: int
    estimator: EstimatorOptions = field(default_factory=EstimatorOptions)
    initial_position_error: tuple = (0.0, 0.0)
    inject_truth: bool = False

    @property
    def cpi_duration(self):
        return self.num_symbols * self.symbol_period


@dataclass
class CpiRecord:
    index: int
    time: float
    predicted_position: Position
    estimated_velocity: Velocity
    true_state: object
    rate: float
    rate_optimal: float
    rate_no_dfc: float
    iterations: int
    termination: str
    data: bool
    error_bound: float = 0.0

    @property
    def position_error(self):
        return cartesian_distance(self.predicted_position, self.true_state)


class PredictiveTracker:
    """
    Runs the sensing/prediction/transmission cycle over a trajectory
    """

    def __init__(self, scenario):
        self.scenario = scenario
        self.records = []

    def _echo(self, index, true_state, transmit):
        scenario = self.scenario
        phase = derive_stream(scenario.seed, Stream.GAIN_PHASE, index).uniform(0.0, 2 * math.pi)
        return generate_echo(
            true_state,
            scenario.geometry,
            scenario.link.with_phase(phase),
            transmit,
            scenario.symbol_period,
            derive_stream(scenario.seed, Stream.ECHO_NOISE, index),
        )

    def _symbols(self, index):
        return qpsk_symbols(derive_stream(self.scenario.seed, Stream.SYMBOLS, index), self.scenario.num_symbols)

    def _rate(self, true_state, transmit):
        scenario = self.scenario
        return cpi_rate(
            true_state, scenario.geometry, scenario.comm_gain, transmit,
            scenario.noise_power, scenario.symbol_period,
        )

    def _estimate(self, index, frame, position, options):
        try:
            return estimate_velocity(frame, position, options)
        except SensingError as e:
            logger.error(f"Velocity estimation failed in CPI {index}: {e}")
            raise EstimationFailure(index, f"velocity estimation failed: {e}") from e

    def _predict(self, index, position, velocity):
        try:
            return propagate_state(position, velocity, self.scenario.cpi_duration, self.scenario.geometry)
        except SensingError as e:
            raise EstimationFailure(index, f"predicted state left the valid region: {e}") from e

    def initial_access(self):
        """CPI 0: sense only, from the reported initial position η̂₀."""
        scenario = self.scenario
        truth = scenario.trajectory.state_at(0.0)
        dr, dtheta = scenario.initial_position_error
        position = Position(truth.r + dr, truth.theta + dtheta)

        spec = BeamformerSpec(position, Velocity(0.0, 0.0), scenario.power, dfc=False)
        transmit = transmit_frame(spec, scenario.geometry, self._symbols(0), scenario.symbol_period)
        frame = self._echo(0, truth, transmit)
        estimate = self._estimate(0, frame, position, scenario.estimator)

        self.records.append(CpiRecord(
            index=0,
            time=0.0,
            predicted_position=position,
            estimated_velocity=estimate.velocity,
            true_state=truth,
            rate=0.0,
            rate_optimal=0.0,
            rate_no_dfc=0.0,
            iterations=estimate.iterations,
            termination=estimate.termination.value,
            data=False,
            error_bound=prediction_error_bound(scenario.trajectory, 0.0, scenario.cpi_duration),
        ))
        logger.info(
            f"Initial access: v̂0=({estimate.velocity.v_r:.3f}, {estimate.velocity.v_theta:.3f}) m/s "
            f"vs truth ({truth.v_r:.3f}, {truth.v_theta:.3f})"
        )
        return self._predict(0, position, estimate.velocity), estimate.velocity

    def data_cpi(self, index, position, previous_velocity):
        """
        One data CPI: beamform, transmit, sense, estimate, predict

        Args:
            index (int): CPI index l >= 1
            position (Position): Predicted position η̂_l
            previous_velocity (Velocity): Estimate v̂_{l-1}

        Returns:
            tuple: (η̂_{l+1}, v̂_l)
        """
        scenario = self.scenario
        geom, period, n_sym = scenario.geometry, scenario.symbol_period, scenario.num_symbols
        time = index * scenario.cpi_duration
        truth = scenario.trajectory.state_at(time)

        if scenario.inject_truth:
            spec = BeamformerSpec(truth.position, truth.velocity, scenario.power, dfc=True)
        else:
            spec = BeamformerSpec(position, previous_velocity, scenario.power, dfc=True)
        transmit = transmit_frame(spec, geom, self._symbols(index), period)

        frame = self._echo(index, truth, transmit)
        estimate = self._estimate(
            index, frame, position, scenario.estimator.seeded(previous_velocity)
        )

        optimal = BeamformerSpec(truth.position, truth.velocity, scenario.power, dfc=True)
        no_dfc = BeamformerSpec(spec.position, spec.velocity, scenario.power, dfc=False)
        self.records.append(CpiRecord(
            index=index,
            time=time,
            predicted_position=position,
            estimated_velocity=estimate.velocity,
            true_state=truth,
            rate=self._rate(truth, transmit),
            rate_optimal=self._rate(truth, beamformer_matrix(optimal, geom, n_sym, period)),
            rate_no_dfc=self._rate(truth, beamformer_matrix(no_dfc, geom, n_sym, period)),
            iterations=estimate.iterations,
            termination=estimate.termination.value,
            data=True,
            error_bound=prediction_error_bound(scenario.trajectory, time, scenario.cpi_duration),
        ))
        return self._predict(index, position, estimate.velocity), estimate.velocity

    def run(self):
        """
        Run every CPI of the scenario

        Returns:
            list: CpiRecord per CPI, index 0 being the sensing-only CPI

        Raises:
            EstimationFailure: With the index of the CPI that failed
        """
        self.records = []
        position, velocity = self.initial_access()
        for index in range(1, self.scenario.num_cpis):
            position, velocity = self.data_cpi(index, position, velocity)
            if index % 100 == 0:
                record = self.records[-1]
                logger.info(
                    f"CPI {index}: position error {record.position_error:.3e} m, "
                    f"rate {record.rate:.3f} bits/s/Hz"
                )
        return self.records


def run_tracking(scenario):
    """Algorithm loop over ``scenario.num_cpis`` CPIs; returns the CpiRecord list."""
    return PredictiveTracker(scenario).run()
