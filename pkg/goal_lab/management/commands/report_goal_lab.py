# goal_lab/management/commands/report_goal_lab.py
from django.core.management.base import BaseCommand
from django.utils.translation import gettext_lazy

from goal_lab.harness import format_report, report
from goal_lab.management.options import command_errors


class Command(BaseCommand):
    help = gettext_lazy('Summarizes metrics CSV files: final-epoch success as mean and sample std '
                        'over seeds, plus samples needed to reach a success threshold.')

    def add_arguments(self, parser):
        parser.add_argument('files', nargs='+', help='Metrics CSV files.')
        parser.add_argument('--output', help='Write the summary as CSV to this path.')
        parser.add_argument('--threshold', type=float, default=0.5,
                            help='Success rate for the samples-to-threshold column.')

    def handle(self, *args, **options):
        with command_errors():
            summary = report(options['files'], output=options['output'], threshold=options['threshold'])
        self.stdout.write(format_report(summary))
        if options['output']:
            self.stdout.write(self.style.SUCCESS(f'Summary written to {options["output"]}'))
