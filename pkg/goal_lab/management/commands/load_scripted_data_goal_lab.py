# goal_lab/management/commands/load_scripted_data_goal_lab.py
import numpy as np
from django.core.management.base import BaseCommand
from django.utils.translation import gettext_lazy

from goal_lab.envs import make_env
from goal_lab.harness import SCRIPTED_ENVS, fill_buffer_scripted, save_dataset
from goal_lab.management.options import command_errors


class Command(BaseCommand):
    """
    Writes a same-side scripted stitching dataset (one episode per line) and
    its pair manifest, for stitch_goal_lab --dataset.
    """
    help = gettext_lazy('Generates scripted same-side demonstrations for a stitching environment.')

    def add_arguments(self, parser):
        parser.add_argument('output', help='Destination .jsonl file.')
        parser.add_argument('--env', choices=list(SCRIPTED_ENVS), default=SCRIPTED_ENVS[0])
        parser.add_argument('--episodes', type=int, default=100)
        parser.add_argument('--seed', type=int, default=0)

    def handle(self, *args, **options):
        self.stdout.write(self.style.HTTP_INFO(
            f'--- Scripting {options["episodes"]} episodes on {options["env"]} ---'
        ))
        with command_errors():
            env = make_env(options['env'])
            buffer, manifest = fill_buffer_scripted(env, options['episodes'], np.random.default_rng(options['seed']))
            path, manifest_path = save_dataset(buffer, manifest, options['output'])

        for (start, goal), count in sorted(manifest.pairs.items()):
            self.stdout.write(f'{start} -> {goal}: {count} episode(s)')
        self.stdout.write(self.style.SUCCESS(f'Dataset written to {path} (manifest {manifest_path})'))
