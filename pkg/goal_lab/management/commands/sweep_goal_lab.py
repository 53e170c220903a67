# goal_lab/management/commands/sweep_goal_lab.py
from django.core.management.base import BaseCommand
from django.utils.translation import gettext_lazy

from goal_lab.harness import SWEEP_DEFAULTS, summarize, sweep, format_report
from goal_lab.management.options import add_run_arguments, command_errors, run_config_from_options


class Command(BaseCommand):
    help = gettext_lazy('Runs an ablation sweep (relabel ratio, eta, action noise or reward form) '
                        'into one metrics CSV with sweep columns.')

    def add_arguments(self, parser):
        add_run_arguments(parser)
        parser.add_argument('--kind', required=True, choices=list(SWEEP_DEFAULTS))
        parser.add_argument('--values', nargs='+', help='Sweep values; defaults depend on --kind.')
        parser.add_argument('--algos', nargs='+', help='Algorithms to sweep; defaults to --algo.')

    def handle(self, *args, **options):
        with command_errors():
            cfg = run_config_from_options(options)
            values = options['values'] or SWEEP_DEFAULTS[options['kind']]
            self.stdout.write(self.style.HTTP_INFO(
                f'--- Sweep {options["kind"]} over {list(values)} on {cfg.env_id} ---'
            ))
            path, records = sweep(options['kind'], cfg, values=values, algos=options['algos'],
                                  persist=not options['no_db'])

        rows = [{
            'env': r.env_id, 'algo': r.algo, 'seed': r.seed, 'epoch': r.epoch,
            'success_rate': r.success_rate, 'samples': r.samples,
            'sweep_kind': r.sweep_kind, 'sweep_value': r.sweep_value,
        } for r in records]
        self.stdout.write(format_report(summarize(rows)))
        self.stdout.write(self.style.SUCCESS(f'Sweep metrics written to {path}'))
