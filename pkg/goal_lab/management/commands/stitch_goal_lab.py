# goal_lab/management/commands/stitch_goal_lab.py
from django.core.management.base import BaseCommand
from django.utils.translation import gettext_lazy

from goal_lab.harness import SCRIPTED_ENVS, train_offline_stitch
from goal_lab.management.options import add_run_arguments, command_errors, run_config_from_options


class Command(BaseCommand):
    help = gettext_lazy('Trains each algorithm on a frozen same-side scripted dataset and reports '
                        'success on seen and cross (start, goal) pairs.')

    def add_arguments(self, parser):
        add_run_arguments(parser, env_choices=list(SCRIPTED_ENVS), with_algo=False)
        parser.add_argument('--algos', nargs='+', default=['qwsl', 'ddpg_her', 'gcsl'])
        parser.add_argument('--episodes', type=int, default=100, help='Scripted episodes per seed.')
        parser.add_argument('--dataset', help='JSON-lines dataset written by load_scripted_data_goal_lab.')
        parser.add_argument('--n-per-pair', type=int, default=10,
                            help='Probe rollouts per (start, goal) pair on continuous envs.')

    def handle(self, *args, **options):
        if options['env'] is None:
            options['env'] = SCRIPTED_ENVS[0]
        with command_errors():
            cfg = run_config_from_options(options)
            self.stdout.write(self.style.HTTP_INFO(
                f'--- Offline stitching on {cfg.env_id}: {", ".join(options["algos"])} ---'
            ))
            rows, path = train_offline_stitch(
                cfg, options['algos'], n_episodes=options['episodes'], dataset=options['dataset'],
                n_per_pair=options['n_per_pair'], persist=not options['no_db'],
            )

        self.stdout.write(f'{"algo":<10}{"seed":>6}{"seen":>8}{"cross":>8}')
        for row in rows:
            self.stdout.write(f'{row.algo:<10}{row.seed:>6}{row.seen_success:>8.2f}{row.cross_success:>8.2f}')
        self.stdout.write(self.style.SUCCESS(f'Stitching results written to {path}'))
