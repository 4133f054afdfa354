import logging

from django.core.management.base import BaseCommand, CommandError

from experiments.config import PRESETS, load_config
from experiments.experiment_manager import EXPERIMENTS, MONTE_CARLO_OF, ExperimentManager
from sensing.exceptions import SensingError

logger = logging.getLogger(__name__)

DEFAULT_PRESET = 'paper-2024'


def _float_list(value):
    try:
        return [float(part) for part in value.split(',') if part.strip()]
    except ValueError:
        raise CommandError(f"expected comma-separated numbers, got {value!r}")


class Command(BaseCommand):
    help = 'Run a near-field sensing / predictive beamforming experiment'

    def add_arguments(self, parser):
        parser.add_argument('experiment', choices=EXPERIMENTS + ('monte-carlo',))
        parser.add_argument('--config', help='JSON scenario file')
        parser.add_argument('--preset', choices=sorted(PRESETS), help='Start from a named preset')
        parser.add_argument('--seed', help='Master seed, unsigned 64-bit')
        parser.add_argument('--out', help='Output root directory')
        parser.add_argument('--distances', help='Comma-separated distances in m (ml-map)')
        parser.add_argument('--powers', help='Comma-separated transmit powers in dBm')
        parser.add_argument('--trials', type=int, help='Monte-Carlo trials')
        parser.add_argument('--workers', type=int, help='Monte-Carlo worker threads')
        parser.add_argument('--cpis', type=int, help='Number of CPIs to track')
        parser.add_argument('--truth', action='store_true', help='Beamform with the true state')
        parser.add_argument('--of', choices=MONTE_CARLO_OF, default='convergence',
                            help='Recipe repeated by monte-carlo')
        parser.add_argument('--no-record', action='store_true', help='Skip the run registry')

    def _overrides(self, options):
        overrides = {}
        if options['seed'] is not None:
            overrides['seed'] = options['seed']
        if options['distances']:
            overrides.setdefault('experiment', {})['distances'] = _float_list(options['distances'])
        if options['powers']:
            overrides.setdefault('power', {})['levels_dbm'] = _float_list(options['powers'])
        if options['trials'] is not None:
            overrides.setdefault('experiment', {})['trials'] = options['trials']
        if options['workers'] is not None:
            overrides.setdefault('experiment', {})['workers'] = options['workers']
        if options['cpis'] is not None:
            overrides.setdefault('cpi', {})['count'] = options['cpis']
        if options['truth']:
            overrides.setdefault('experiment', {})['inject_truth'] = True
        return overrides

    def handle(self, *args, **options):
        preset = options['preset']
        if options['config'] is None and preset is None:
            preset = DEFAULT_PRESET
        experiment = options['experiment']
        record = not options['no_record']
        try:
            config = load_config(options['config'], preset=preset, overrides=self._overrides(options))
            if experiment == 'monte-carlo':
                output = ExperimentManager.monte_carlo(
                    options['of'], config, out=options['out'], record=record,
                )
            else:
                output = ExperimentManager.run_experiment(
                    experiment, config, out=options['out'], record=record,
                )
        except SensingError as e:
            raise CommandError(f"{experiment}: {e}")

        for artifact in output.artifacts:
            self.stdout.write(f"{artifact.file_name}: {artifact.rows} rows, sha256 {artifact.sha256}")
        self.stdout.write(self.style.SUCCESS(f"{experiment} finished; manifest at {output.manifest}"))
