"""
Experiment recipes, Monte-Carlo sweeps and the run registry.

Every recipe writes its tables under ``<out>/<experiment>/`` together with a
``manifest.json`` and returns the tables as DataFrames.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from django.conf import settings
from django.db import transaction

from beamforming.beamformer import BeamformerSpec, qpsk_symbols, transmit_frame
from beamforming.tracker import run_tracking
from estimation.estimator import Axis, curvature, estimate_velocity, ml_slice
from sensing.echo import db_to_linear, generate_echo, signal_matrix, watts_to_dbm
from sensing.exceptions import ConfigError, SensingError
from sensing.geometry import Velocity
from sensing.streams import Stream, derive_stream, trial_seed

from .models import ExperimentRun, RunArtifact
from .writers import write_manifest, write_records_json, write_table

logger = logging.getLogger(__name__)

EXPERIMENTS = ('ml-map', 'convergence', 'track', 'rate-curve')
MONTE_CARLO_OF = ('convergence', 'track')


@dataclass
class ExperimentOutput:
    experiment: str
    directory: Path
    tables: dict
    artifacts: list
    manifest: Path
    extra: dict = field(default_factory=dict)


def _polar_xy(r, theta):
    return r * math.cos(theta), r * math.sin(theta)


def sensing_transmit(config, position, power, symbols):
    """Sensing-only waveform: beam toward ``position`` without Doppler compensation."""
    spec = BeamformerSpec(position, Velocity(0.0, 0.0), power, dfc=False)
    return transmit_frame(spec, config.geometry, symbols, config.symbol_period)


def sensing_frame(config, state, transmit, index, seed):
    """Echo of ``transmit`` off ``state`` with the streams of slot ``index``."""
    phase = derive_stream(seed, Stream.GAIN_PHASE, index).uniform(0.0, 2 * math.pi)
    return generate_echo(
        state,
        config.geometry,
        config.sensing_link(phase),
        transmit,
        config.symbol_period,
        derive_stream(seed, Stream.ECHO_NOISE, index),
    )


def receive_snr(config, state, transmit):
    """Per-sample receive SNR |β|² ‖X‖²_F / (M N σ²) of a noise-free echo."""
    model = signal_matrix(state, state, config.geometry, transmit, config.symbol_period)
    energy = float(np.vdot(model, model).real)
    return config.radar_gain_power * energy / (model.size * config.noise_power)


def equal_snr_power(config, state, symbols):
    """
    Transmit power (W) that puts the echo of ``state`` at the configured receive SNR

    ‖X‖²_F grows linearly with P_t, so the power follows from the echo of a
    1 W transmission of the same waveform.

    Args:
        config (ScenarioConfig): Scenario with ``experiment.receive_snr_db``
        state (TargetState): True target state
        symbols (ndarray): Unit-modulus data symbols of the sensing CPI

    Returns:
        float: P_t in W
    """
    unit = sensing_transmit(config, state.position, 1.0, symbols)
    target = db_to_linear(config.experiment['receive_snr_db'])
    return target / receive_snr(config, state, unit)


class ExperimentManager:
    """
    Runs the experiment recipes and keeps the run registry
    """

    @staticmethod
    def output_directory(config, experiment, out=None):
        root = out or config.output['directory'] or settings.NFISAC_OUTPUT_DIR
        return Path(root) / experiment

    @staticmethod
    def write_outputs(directory, experiment, config, tables, extra=None):
        formats = config.output['formats']
        artifacts = []
        for name, frame in tables.items():
            if 'csv' in formats:
                artifacts.append(write_table(directory, name, frame))
            if 'json' in formats:
                artifacts.append(write_records_json(directory, name, frame))
        manifest = write_manifest(directory, experiment, config, artifacts, extra)
        return artifacts, manifest

    # Recipes

    @staticmethod
    def ml_map(config):
        """Likelihood slices and curvatures at every configured distance, equal receive SNR."""
        slices, curvatures, powers = [], [], {}
        exp = config.experiment
        h = exp['curvature_step']
        for index, distance in enumerate(exp['distances']):
            state = config.target_state(distance)
            symbols = qpsk_symbols(derive_stream(config.seed, Stream.SYMBOLS, index), config.num_symbols)
            power = equal_snr_power(config, state, symbols)
            transmit = sensing_transmit(config, state.position, power, symbols)
            frame = sensing_frame(config, state, transmit, index, config.seed)
            powers[f"{distance:g}"] = power

            for axis, fixed in ((Axis.RADIAL, state.v_theta), (Axis.TRANSVERSE, state.v_r)):
                table = ml_slice(
                    frame, state.position, axis, fixed,
                    (exp['slice_min'], exp['slice_max']), exp['slice_points'],
                )
                peak = float(np.max(table.values))
                for velocity, value in table.rows():
                    slices.append({
                        'distance_m': distance,
                        'axis': axis.value,
                        'fixed_other_mps': fixed,
                        'velocity_mps': velocity,
                        'objective': value,
                        'objective_normalised': value / peak,
                    })
                curvatures.append({
                    'distance_m': distance,
                    'axis': axis.value,
                    'curvature': curvature(frame, state.position, state.velocity, axis, h),
                    'step_mps': h,
                    'peak_velocity_mps': table.peak,
                    'peak_to_mean': table.peak_to_mean,
                    'power_w': power,
                    'power_dbm': watts_to_dbm(power),
                })
            logger.info(f"ml-map: r={distance:g} m at P_t={watts_to_dbm(power):.2f} dBm")
        tables = {'slices': pd.DataFrame(slices), 'curvature': pd.DataFrame(curvatures)}
        return tables, {'power_w_by_distance': powers}

    @staticmethod
    def estimate_once(config, power, seed):
        """Single sensing CPI at the target; returns the EstimateResult and the truth."""
        state = config.target_state()
        symbols = qpsk_symbols(derive_stream(seed, Stream.SYMBOLS, 0), config.num_symbols)
        transmit = sensing_transmit(config, state.position, power, symbols)
        frame = sensing_frame(config, state, transmit, 0, seed)
        return estimate_velocity(frame, state.position, config.estimator_options()), state

    @staticmethod
    def convergence(config):
        """Per-iteration trace of the estimator on one echo."""
        result, state = ExperimentManager.estimate_once(config, config.transmit_power, config.seed)
        rows = []
        for iteration, (velocity, value) in enumerate(zip(result.velocity_trace, result.objective_trace)):
            rows.append({
                'iteration': iteration,
                'v_r_mps': velocity.v_r,
                'v_theta_mps': velocity.v_theta,
                'objective': value,
                'error_v_r_mps': velocity.v_r - state.v_r,
                'error_v_theta_mps': velocity.v_theta - state.v_theta,
            })
        extra = {
            'termination': result.termination.value,
            'iterations': result.iterations,
            'start': list(result.start),
            'truth': [state.v_r, state.v_theta],
            'beta': [result.beta.real, result.beta.imag],
        }
        logger.info(
            f"convergence: {result.iterations} iterations ({result.termination.value}), "
            f"v̂=({result.velocity.v_r:.6f}, {result.velocity.v_theta:.6f})"
        )
        return {'convergence': pd.DataFrame(rows)}, extra

    @staticmethod
    def track_records(config, label, power, seed=None):
        """Run the tracking loop at one power and flatten the CpiRecords."""
        records = run_tracking(config.tracking(power, seed))
        rows = []
        for record in records:
            truth, predicted = record.true_state, record.predicted_position
            true_x, true_y = _polar_xy(truth.r, truth.theta)
            pred_x, pred_y = _polar_xy(predicted.r, predicted.theta)
            rows.append({
                'power': label,
                'power_w': power,
                'cpi': record.index,
                'time_s': record.time,
                'data': record.data,
                'true_r_m': truth.r,
                'true_theta_deg': math.degrees(truth.theta),
                'true_x_m': true_x,
                'true_y_m': true_y,
                'true_v_r_mps': truth.v_r,
                'true_v_theta_mps': truth.v_theta,
                'pred_r_m': predicted.r,
                'pred_theta_deg': math.degrees(predicted.theta),
                'pred_x_m': pred_x,
                'pred_y_m': pred_y,
                'est_v_r_mps': record.estimated_velocity.v_r,
                'est_v_theta_mps': record.estimated_velocity.v_theta,
                'position_error_m': record.position_error,
                'error_bound_m': record.error_bound,
                'rate': record.rate,
                'rate_optimal': record.rate_optimal,
                'rate_no_dfc': record.rate_no_dfc,
                'iterations': record.iterations,
                'termination': record.termination,
            })
        return pd.DataFrame(rows)

    @staticmethod
    def _tracking_runs(config):
        return pd.concat(
            [ExperimentManager.track_records(config, label, power) for label, power in config.power_levels],
            ignore_index=True,
        )

    @staticmethod
    def track(config):
        runs = ExperimentManager._tracking_runs(config)
        columns = [c for c in runs.columns if not c.startswith('rate')]
        return {'track': runs[columns]}, {'num_cpis': config.num_cpis}

    @staticmethod
    def rate_curve(config):
        runs = ExperimentManager._tracking_runs(config)
        columns = ['power', 'power_w', 'cpi', 'time_s', 'data', 'rate', 'rate_optimal', 'rate_no_dfc']
        return {'rate': runs[columns]}, {'num_cpis': config.num_cpis}

    @staticmethod
    def run_experiment(name, config, overrides=None, out=None, record=False):
        """
        Run one recipe and write its outputs

        Args:
            name (str): One of ``ml-map``, ``convergence``, ``track``, ``rate-curve``
            config (ScenarioConfig): Validated scenario
            overrides (dict, optional): ``{section: {field: value}}`` applied on top
            out (str, optional): Output root; defaults to the config, then settings
            record (bool): Store the run in the registry

        Returns:
            ExperimentOutput: Tables, written files and manifest path
        """
        recipes = {
            'ml-map': ExperimentManager.ml_map,
            'convergence': ExperimentManager.convergence,
            'track': ExperimentManager.track,
            'rate-curve': ExperimentManager.rate_curve,
        }
        if name not in recipes:
            raise ConfigError(f"experiment: unknown experiment {name!r}; choose from {list(recipes)}")
        if overrides:
            config = config.with_overrides(overrides)
        directory = ExperimentManager.output_directory(config, name, out)
        logger.info(f"Running {name} (seed={config.seed}) into {directory}")
        try:
            tables, extra = recipes[name](config)
        except SensingError as e:
            logger.error(f"Experiment {name} failed: {e}")
            if record:
                ExperimentManager.record_run(name, config, directory, [], status='failed', message=str(e))
            raise
        artifacts, manifest = ExperimentManager.write_outputs(directory, name, config, tables, extra)
        if record:
            ExperimentManager.record_run(name, config, directory, artifacts)
        return ExperimentOutput(name, directory, tables, artifacts, manifest, extra)

    # Monte-Carlo

    @staticmethod
    def _convergence_trial(config, label, power, trial):
        seed = trial_seed(config.seed, trial)
        result, state = ExperimentManager.estimate_once(config, power, seed)
        return {
            'power': label,
            'power_w': power,
            'trial': trial,
            'seed': str(seed),
            'est_v_r_mps': result.velocity.v_r,
            'est_v_theta_mps': result.velocity.v_theta,
            'error_v_r_mps': result.velocity.v_r - state.v_r,
            'error_v_theta_mps': result.velocity.v_theta - state.v_theta,
            'iterations': result.iterations,
            'termination': result.termination.value,
        }

    @staticmethod
    def _track_trial(config, label, power, trial):
        seed = trial_seed(config.seed, trial)
        runs = ExperimentManager.track_records(config, label, power, seed)
        data = runs[runs['data']]
        return {
            'power': label,
            'power_w': power,
            'trial': trial,
            'seed': str(seed),
            'sq_error_v_r': float(np.mean((runs['est_v_r_mps'] - runs['true_v_r_mps']) ** 2)),
            'sq_error_v_theta': float(np.mean((runs['est_v_theta_mps'] - runs['true_v_theta_mps']) ** 2)),
            'sq_error_position': float(np.mean(runs['position_error_m'] ** 2)),
            'max_position_error_m': float(runs['position_error_m'].max()),
            'mean_rate': float(data['rate'].mean()),
            'mean_rate_optimal': float(data['rate_optimal'].mean()),
            'mean_rate_no_dfc': float(data['rate_no_dfc'].mean()),
        }

    @staticmethod
    def _summarise(of, trials):
        grouped = trials.groupby(['power', 'power_w'], sort=False)
        if of == 'convergence':
            summary = grouped.agg(
                trials=('trial', 'count'),
                mse_v_r=('error_v_r_mps', lambda e: float(np.mean(np.square(e)))),
                mse_v_theta=('error_v_theta_mps', lambda e: float(np.mean(np.square(e)))),
                mean_iterations=('iterations', 'mean'),
            ).reset_index()
            summary['rmse_v_r_mps'] = np.sqrt(summary.pop('mse_v_r'))
            summary['rmse_v_theta_mps'] = np.sqrt(summary.pop('mse_v_theta'))
            return summary
        summary = grouped.agg(
            trials=('trial', 'count'),
            mse_v_r=('sq_error_v_r', 'mean'),
            mse_v_theta=('sq_error_v_theta', 'mean'),
            mse_position=('sq_error_position', 'mean'),
            max_position_error_m=('max_position_error_m', 'max'),
            rate_mean=('mean_rate', 'mean'),
            rate_std=('mean_rate', lambda r: float(np.std(r))),
            rate_optimal_mean=('mean_rate_optimal', 'mean'),
            rate_no_dfc_mean=('mean_rate_no_dfc', 'mean'),
        ).reset_index()
        summary['rmse_v_r_mps'] = np.sqrt(summary.pop('mse_v_r'))
        summary['rmse_v_theta_mps'] = np.sqrt(summary.pop('mse_v_theta'))
        summary['rmse_position_m'] = np.sqrt(summary.pop('mse_position'))
        return summary

    @staticmethod
    def monte_carlo(of, config, trials=None, workers=None, out=None, record=False):
        """
        Repeat a recipe over independent trials and aggregate

        Trial t runs on ``trial_seed(seed, t)``; rows are ordered by power and
        trial whatever order the workers finish in.

        Args:
            of (str): ``convergence`` or ``track``
            config (ScenarioConfig): Validated scenario
            trials (int, optional): Overrides ``experiment.trials``
            workers (int, optional): Overrides ``experiment.workers``
            out (str, optional): Output root
            record (bool): Store the run in the registry

        Returns:
            ExperimentOutput: ``<of>-trials`` and ``<of>-summary`` tables
        """
        if of not in MONTE_CARLO_OF:
            raise ConfigError(f"experiment: monte-carlo runs {list(MONTE_CARLO_OF)}, not {of!r}")
        trials = trials or config.experiment['trials']
        workers = workers or config.experiment['workers']
        if trials < 1:
            raise ConfigError(f"experiment.trials: must be at least 1, got {trials}")

        if of == 'convergence' and not config.power['levels_dbm']:
            powers = [(f"{watts_to_dbm(config.transmit_power):g}dBm", config.transmit_power)]
        else:
            powers = config.power_levels
        run_trial = ExperimentManager._convergence_trial if of == 'convergence' else ExperimentManager._track_trial
        jobs = [(label, power, trial) for label, power in powers for trial in range(trials)]

        logger.info(f"Monte-Carlo {of}: {trials} trials x {len(powers)} powers on {workers} workers")
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda job: run_trial(config, *job), jobs))

        trial_table = pd.DataFrame(rows)
        tables = {f"{of}-trials": trial_table, f"{of}-summary": ExperimentManager._summarise(of, trial_table)}
        directory = ExperimentManager.output_directory(config, 'monte-carlo', out)
        extra = {'of': of, 'trials': trials}
        artifacts, manifest = ExperimentManager.write_outputs(directory, 'monte-carlo', config, tables, extra)
        if record:
            ExperimentManager.record_run('monte-carlo', config, directory, artifacts)
        return ExperimentOutput('monte-carlo', directory, tables, artifacts, manifest, extra)

    # Registry

    @staticmethod
    def record_run(name, config, directory, artifacts, status='finished', message=''):
        """
        Store a run and its files in the registry

        Args:
            name (str): Experiment name
            config (ScenarioConfig): Configuration of the run
            directory (Path): Output directory
            artifacts (list): Written files
            status (str): ``finished`` or ``failed``
            message (str): Failure diagnostic

        Returns:
            ExperimentRun: The stored run or None if the registry is unavailable
        """
        try:
            with transaction.atomic():
                run = ExperimentRun(
                    name=name,
                    preset=config.preset or '',
                    seed=str(config.seed),
                    config_hash=config.config_hash,
                    output_dir=str(directory),
                    status=status,
                    message=message,
                )
                run.set_config(config.raw)
                run.save()
                for artifact in artifacts:
                    stored = RunArtifact(
                        run=run, file_name=artifact.file_name, rows=artifact.rows, sha256=artifact.sha256,
                    )
                    stored.set_columns(artifact.columns)
                    stored.save()
                logger.info(f"Recorded {name} run {run.id} with {len(artifacts)} files")
                return run
        except Exception as e:
            logger.warning(f"Could not record {name} run in the registry: {str(e)}")
            return None


run_experiment = ExperimentManager.run_experiment
monte_carlo = ExperimentManager.monte_carlo
