"""
Scenario configuration: presets, JSON loading, validation and derived quantities.

A configuration file is a JSON object with the sections ``physical``, ``cpi``,
``power``, ``target``, ``trajectory``, ``estimator``, ``experiment`` and
``output`` plus top-level ``seed`` and ``preset``. Physical defaults only come
from a named preset; the remaining sections have library defaults.
"""
import copy
import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

from scipy.constants import c as SPEED_OF_LIGHT

from beamforming.tracker import TrackingScenario
from beamforming.trajectory import Trajectory
from estimation.estimator import CoarseGrid, EstimatorOptions
from estimation.line_search import LineSearchOptions
from sensing.echo import (
    SensingLink, comm_gain, db_to_linear, dbm_to_watts, noise_power, radar_gain_power,
)
from sensing.exceptions import ConfigError
from sensing.geometry import ArrayGeometry, TargetState, Velocity

from .forms import SECTION_FORMS

logger = logging.getLogger(__name__)

MAX_SEED = 2 ** 64 - 1

PRESETS = {
    'paper-2024': {
        'physical': {
            'carrier_frequency': 28e9,
            'bandwidth': 100e3,
            'num_antennas': 512,
            'spacing': 'half-wavelength',
            'tx_gain': 1.0,
            'rx_gain': 1.0,
            'rcs_db': -23.0,
            'noise_density_dbm_hz': -174.0,
        },
        'cpi': {'num_symbols': 200},
        'power': {'transmit_dbm': 30.0},
        'target': {'r': 10.0, 'theta_deg': 60.0, 'v_r': 10.0, 'v_theta': 8.0},
        'trajectory': {
            # 5 degree turns keep each velocity jump inside the radial main lobe
            'waypoints': [
                [-8.0, 6.0], [-5.5, 6.0], [-3.01, 6.22], [-0.55, 6.65], [1.87, 7.30],
                [4.22, 8.15], [6.48, 9.21], [8.65, 10.46], [10.70, 11.89], [12.61, 13.50],
            ],
            'speed': 20.0,
        },
    },
}

SECTION_DEFAULTS = {
    'physical': {},
    'cpi': {'count': None},
    'power': {'transmit_dbm': None, 'transmit_w': None, 'levels_dbm': []},
    'target': {},
    'trajectory': {
        'waypoints': [], 'speed': None, 'initial_error_r': 0.0, 'initial_error_theta_deg': 0.0,
    },
    'estimator': {
        'max_iters': 100,
        'grad_tol': 1e-8,
        'step_tol': 1e-4,
        'init_v_r': 0.0,
        'init_v_theta': 0.0,
        'shrink': 0.5,
        'sufficient_increase': 1e-4,
        'initial_step': None,
        'coarse_grid': True,
        'grid_v_max': 30.0,
        'grid_points': 31,
        'direction': 'quasi-newton',
    },
    'experiment': {
        'distances': [10.0, 40.0, 80.0],
        'receive_snr_db': -10.0,
        'slice_min': -10.0,
        'slice_max': 30.0,
        'slice_points': 401,
        'curvature_step': 0.1,
        'trials': 1,
        'workers': 1,
        'noise': True,
        'inject_truth': False,
    },
    'output': {'directory': '', 'formats': ['csv']},
}

# CPIs without explicit count when the user moves along a straight line
DEFAULT_STRAIGHT_CPIS = 500


def merge(base, override):
    """Section-wise merge; keys in ``override`` win."""
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key].update(copy.deepcopy(value))
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _validate_section(name, data):
    form_class = SECTION_FORMS[name]
    unknown = sorted(set(data) - set(form_class.base_fields))
    if unknown:
        raise ConfigError(f"{name}.{unknown[0]}: unknown field")
    form = form_class(data=data)
    if not form.is_valid():
        messages = []
        for field_name, errors in form.errors.items():
            path = name if field_name == '__all__' else f"{name}.{field_name}"
            messages.extend(f"{path}: {error}" for error in errors)
        raise ConfigError('; '.join(messages))
    return form.cleaned_data


def _validate_seed(seed):
    try:
        seed = int(seed)
    except (TypeError, ValueError):
        raise ConfigError(f"seed: expected an unsigned 64-bit integer, got {seed!r}")
    if not 0 <= seed <= MAX_SEED:
        raise ConfigError(f"seed: expected an unsigned 64-bit integer, got {seed}")
    return seed


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario with every derived physical quantity."""

    raw: dict
    physical: dict
    cpi: dict
    power: dict
    target: dict
    trajectory_spec: dict
    estimator: dict
    experiment: dict
    output: dict
    seed: int
    preset: str = None

    @classmethod
    def from_dict(cls, data):
        """
        Validate a configuration dictionary

        Args:
            data (dict): Sections plus ``seed`` and optional ``preset``

        Returns:
            ScenarioConfig: Validated configuration

        Raises:
            ConfigError: Naming the offending ``section.field``
        """
        data = copy.deepcopy(data)
        preset = data.pop('preset', None)
        base = {}
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(f"preset: unknown preset {preset!r}; choose from {sorted(PRESETS)}")
            base = PRESETS[preset]
        seed = _validate_seed(data.pop('seed', 0))
        unknown = sorted(set(data) - set(SECTION_FORMS))
        if unknown:
            raise ConfigError(f"{unknown[0]}: unknown section")

        merged = merge(merge(SECTION_DEFAULTS, base), data)
        if 'physical' not in data and not base:
            raise ConfigError("physical: section is required when no preset is given")
        if not merged['target']:
            raise ConfigError("target: section is required when no preset is given")
        cleaned = {name: _validate_section(name, merged[name]) for name in SECTION_FORMS}

        raw = merge(merged, {})
        raw['seed'] = seed
        if preset is not None:
            raw['preset'] = preset
        config = cls(
            raw=raw,
            physical=cleaned['physical'],
            cpi=cleaned['cpi'],
            power=cleaned['power'],
            target=cleaned['target'],
            trajectory_spec=cleaned['trajectory'],
            estimator=cleaned['estimator'],
            experiment=cleaned['experiment'],
            output=cleaned['output'],
            seed=seed,
            preset=preset,
        )
        config._check_invariants()
        return config

    def _check_invariants(self):
        geometry = self.geometry
        try:
            geometry.require_outside(self.target_state().r)
        except ValueError as e:
            raise ConfigError(f"target.r: {e}")
        for distance in self.experiment['distances']:
            try:
                geometry.require_outside(distance)
            except ValueError as e:
                raise ConfigError(f"experiment.distances: {e}")
        self.num_cpis

    def with_overrides(self, overrides):
        """New configuration with ``{section: {field: value}}`` and ``seed`` overrides applied."""
        return ScenarioConfig.from_dict(merge(self.raw, overrides))

    # Derived physics

    @property
    def wavelength(self):
        return SPEED_OF_LIGHT / self.physical['carrier_frequency']

    @property
    def spacing(self):
        if self.physical['spacing'] == 'half-wavelength':
            return self.wavelength / 2
        return self.physical['spacing']

    @property
    def geometry(self):
        return ArrayGeometry(self.physical['num_antennas'], self.spacing, self.wavelength)

    @property
    def symbol_period(self):
        return 1.0 / self.physical['bandwidth']

    @property
    def num_symbols(self):
        return self.cpi['num_symbols']

    @property
    def cpi_duration(self):
        return self.num_symbols * self.symbol_period

    @property
    def noise_power(self):
        """σ² (W) over the system bandwidth."""
        return noise_power(self.physical['noise_density_dbm_hz'], self.physical['bandwidth'])

    @property
    def sensing_noise_power(self):
        """Noise injected into echoes; zero when the experiment runs noise-free."""
        return self.noise_power if self.experiment['noise'] else 0.0

    @property
    def rcs(self):
        return db_to_linear(self.physical['rcs_db'])

    @property
    def radar_gain_power(self):
        return radar_gain_power(
            self.wavelength, self.physical['tx_gain'], self.physical['rx_gain'], self.rcs
        )

    @property
    def comm_gain(self):
        return comm_gain(self.wavelength, self.physical['tx_gain'], self.physical['rx_gain'])

    def sensing_link(self, phase=0.0):
        return SensingLink.from_radar_equation(
            self.wavelength, self.physical['tx_gain'], self.physical['rx_gain'],
            self.rcs, self.sensing_noise_power, phase=phase,
        )

    @property
    def transmit_power(self):
        """Single transmit power (W) for single-CPI experiments."""
        if self.power['transmit_w'] is not None:
            return self.power['transmit_w']
        if self.power['transmit_dbm'] is not None:
            return dbm_to_watts(self.power['transmit_dbm'])
        raise ConfigError("power.transmit_dbm: required for this experiment")

    @property
    def power_levels(self):
        """[(label, watts)] for the multi-power recipes; never defaulted."""
        levels = self.power['levels_dbm']
        if not levels:
            raise ConfigError("power.levels_dbm: required for this experiment (use --powers)")
        return [(f"{level:g}dBm", dbm_to_watts(level)) for level in levels]

    # Scenario pieces

    def target_state(self, distance=None):
        target = self.target
        return TargetState(
            r=target['r'] if distance is None else distance,
            theta=math.radians(target['theta_deg']),
            v_r=target['v_r'],
            v_theta=target['v_theta'],
        )

    def estimator_options(self):
        estimator = self.estimator
        grid = None
        if estimator['coarse_grid']:
            grid = CoarseGrid(v_max=estimator['grid_v_max'], points=estimator['grid_points'])
        return EstimatorOptions(
            max_iters=estimator['max_iters'],
            grad_tol=estimator['grad_tol'],
            step_tol=estimator['step_tol'],
            init=Velocity(estimator['init_v_r'], estimator['init_v_theta']),
            line_search=LineSearchOptions(
                shrink=estimator['shrink'],
                sufficient_increase=estimator['sufficient_increase'],
                initial_step=estimator['initial_step'],
            ),
            coarse_grid=grid,
            direction=estimator['direction'],
        )

    def trajectory(self):
        spec = self.trajectory_spec
        if spec['waypoints']:
            return Trajectory(spec['waypoints'], spec['speed'])
        count = self.cpi['count'] or DEFAULT_STRAIGHT_CPIS
        return Trajectory.from_state(self.target_state(), (count - 1) * self.cpi_duration)

    @property
    def num_cpis(self):
        duration = self.trajectory().duration
        available = int(math.floor(duration / self.cpi_duration * (1 + 1e-12))) + 1
        count = self.cpi['count']
        if count is None:
            return available
        if count > available:
            raise ConfigError(
                f"cpi.count: {count} CPIs need {(count - 1) * self.cpi_duration:.4g} s "
                f"but the trajectory lasts {duration:.4g} s"
            )
        return count

    def tracking(self, power, seed=None):
        """TrackingScenario for one transmit power (W)."""
        spec = self.trajectory_spec
        return TrackingScenario(
            geometry=self.geometry,
            trajectory=self.trajectory(),
            num_symbols=self.num_symbols,
            symbol_period=self.symbol_period,
            power=power,
            link=self.sensing_link(),
            comm_gain=self.comm_gain,
            noise_power=self.noise_power,
            seed=self.seed if seed is None else seed,
            num_cpis=self.num_cpis,
            estimator=self.estimator_options(),
            initial_position_error=(
                spec['initial_error_r'] or 0.0,
                math.radians(spec['initial_error_theta_deg'] or 0.0),
            ),
            inject_truth=self.experiment['inject_truth'],
        )

    # Provenance

    def canonical_json(self):
        return json.dumps(self.raw, sort_keys=True, separators=(',', ':'))

    @property
    def config_hash(self):
        return hashlib.sha256(self.canonical_json().encode('utf-8')).hexdigest()

    def derived(self):
        """Derived quantities echoed into the manifest."""
        return {
            'wavelength_m': self.wavelength,
            'spacing_m': self.spacing,
            'symbol_period_s': self.symbol_period,
            'cpi_duration_s': self.cpi_duration,
            'noise_power_w': self.noise_power,
            'rcs_linear': self.rcs,
            'radar_gain_power': self.radar_gain_power,
            'comm_gain': self.comm_gain,
        }


def load_config(path=None, preset=None, overrides=None):
    """
    Load, merge and validate a scenario

    Args:
        path (str, optional): JSON configuration file
        preset (str, optional): Preset to start from; a ``preset`` key in the file wins
        overrides (dict, optional): ``{section: {field: value}}`` and/or ``seed``

    Returns:
        ScenarioConfig: Validated configuration
    """
    data = {}
    if path is not None:
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding='utf-8'))
        except FileNotFoundError:
            raise ConfigError(f"configuration file {path} does not exist")
        except json.JSONDecodeError as e:
            raise ConfigError(f"configuration file {path} is not valid JSON: {e}")
        if not isinstance(data, dict):
            raise ConfigError(f"configuration file {path} must hold a JSON object")
    if preset is not None:
        data.setdefault('preset', preset)
    data = merge(data, overrides)
    config = ScenarioConfig.from_dict(data)
    logger.info(
        f"Loaded scenario (preset={config.preset}, seed={config.seed}, hash={config.config_hash[:12]})"
    )
    return config
