"""
Management command to check SNARE annotations against the published split sizes.

Usage:
    python manage.py validate_data --snare /data/snare/amt/folds_adversarial \
        --categories /data/snare/object_categories.csv

Prints the per-split statistics as key=value lines followed by status=pass or
status=fail and one diff line per mismatching constant. A mismatch is a
result, not an error, so the exit code stays 0.
"""

import logging
from pathlib import Path

from django.template.loader import render_to_string

from grounding.management.base import GroundingCommand
from grounding.snare import load_annotations, load_object_categories, validate_counts

logger = logging.getLogger(__name__)


class Command(GroundingCommand):
    help = 'Compute SNARE split statistics and compare them with the published counts'

    def add_command_arguments(self, parser):
        parser.add_argument('--snare', required=True, help='Annotation directory or file')
        parser.add_argument('--categories', help='object_id,category CSV for the category counts')
        parser.add_argument('--report', help='Also write a text report to this path')

    def run(self, **options):
        source = Path(options['snare'])
        if not source.exists():
            raise FileNotFoundError(f"SNARE annotations not found: {source}")

        instances = load_annotations(source)
        categories = load_object_categories(options['categories']) if options['categories'] else None
        report = validate_counts(instances, categories)
        lines = report.as_lines()

        for line in lines:
            self.stdout.write(line)

        if options['report']:
            title = 'SNARE split statistics'
            text = render_to_string('reports/split_stats.txt', {
                'title': title,
                'title_rule': '=' * len(title),
                'source': source,
                'instance_count': len(instances),
                'unlabeled_count': sum(1 for instance in instances if not instance.labeled),
                'lines': lines,
            })
            Path(options['report']).write_text(text, encoding='utf-8')

        if not report.passed:
            logger.warning(
                f"SNARE counts differ from the published constants in {len(report.mismatches)} place(s)",
                extra={'source': str(source)},
            )
        return {'passed': report.passed, 'convention': report.convention, 'instances': len(instances)}
