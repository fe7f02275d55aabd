"""
Management command to render a results file as a fixed-width table.

Usage:
    python manage.py render_results --results runs/ablation/results.txt --split valid

Results files hold one row per line as key=value tokens (name, split,
visual, blind, all and optional *_std).
"""

from django.core.management.base import CommandError

from grounding.evaluation import read_result_rows, render_table
from grounding.management.base import EXIT_IO, GroundingCommand, usage_error


class Command(GroundingCommand):
    help = 'Render result rows as a Visual / Blind / All table'

    def add_command_arguments(self, parser):
        parser.add_argument('--results', required=True, help='Results file (key=value rows)')
        parser.add_argument('--split', help='Split to render (default: every split in file order)')

    def run(self, **options):
        try:
            rows = read_result_rows(options['results'])
        except ValueError as exc:
            raise CommandError(str(exc), returncode=EXIT_IO) from None

        splits = list(dict.fromkeys(row.split for row in rows))
        if options['split']:
            if options['split'] not in splits:
                raise usage_error(f"no rows for split {options['split']!r}; file has: {', '.join(splits)}")
            splits = [options['split']]

        self.stdout.write('\n'.join(render_table(rows, split) for split in splits), ending='')
        return {'rows': len(rows), 'splits': splits}
