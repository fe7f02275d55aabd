"""
Management command to print a feature archive's manifest.

Usage:
    python manage.py dump_manifest --archive data/synth/features.vlgf
"""

from grounding.features import read_archive
from grounding.management.base import GroundingCommand


class Command(GroundingCommand):
    help = 'Print the dimensions and record counts of a feature archive'

    def add_command_arguments(self, parser):
        parser.add_argument('--archive', required=True, help='Feature archive to inspect')

    def run(self, **options):
        manifest = read_archive(options['archive']).manifest
        for line in manifest.as_lines():
            self.stdout.write(line)
        return {'objects': manifest.object_count, 'descriptions': manifest.description_count}
