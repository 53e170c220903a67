# goal_lab/management/commands/train_goal_lab.py
from django.core.management.base import BaseCommand
from django.utils.translation import gettext_lazy

from goal_lab.harness import train
from goal_lab.management.options import add_run_arguments, command_errors, run_config_from_options


class Command(BaseCommand):
    help = gettext_lazy('Trains one algorithm on one environment for every seed and writes a metrics CSV '
                        'plus one checkpoint per seed.')

    def add_arguments(self, parser):
        add_run_arguments(parser)

    def handle(self, *args, **options):
        with command_errors():
            cfg = run_config_from_options(options)
            self.stdout.write(self.style.HTTP_INFO(
                f'--- Training {cfg.algo.value} on {cfg.env_id}: seeds {list(cfg.seeds)}, '
                f'{cfg.epochs} epoch(s) x {cfg.cycles_per_epoch} cycle(s) ---'
            ))
            result = train(cfg, persist=not options['no_db'])

        for seed in cfg.seeds:
            final = [r for r in result.records if r.seed == seed][-1]
            self.stdout.write(f'seed {seed}: final success {100 * final.success_rate:.1f}%')
        self.stdout.write(self.style.SUCCESS(f'Metrics written to {result.metrics_path}'))
        for path in result.checkpoint_paths:
            self.stdout.write(f'Checkpoint: {path}')
        if result.run is not None:
            self.stdout.write(self.style.SUCCESS(f'Run stored as {result.run.pk}'))
