"""
Management command to score a checkpoint on one split.

Usage:
    python manage.py evaluate --checkpoint runs/full-seed0/best.vlgc --split test

Prints a single machine-readable line: visual=... blind=... all=...
The archive and annotations recorded in the checkpoint are used unless
--archive / --annotations point elsewhere.
"""

import logging

from grounding.checkpoints import load_checkpoint
from grounding.evaluation import evaluate_model
from grounding.features import read_archive
from grounding.management.base import GroundingCommand, usage_error
from grounding.snare import EmptySplitError, load_annotations, parse_split

logger = logging.getLogger(__name__)


class Command(GroundingCommand):
    help = 'Evaluate a checkpoint and print per-category accuracy'

    def add_command_arguments(self, parser):
        parser.add_argument('--checkpoint', required=True, help='Checkpoint written by train')
        parser.add_argument('--split', default='valid', help='train, valid (or val) or test (default: valid)')
        parser.add_argument('--archive', help='Feature archive (default: the one recorded in the checkpoint)')
        parser.add_argument('--annotations', help='Annotations (default: the ones recorded in the checkpoint)')

    def run(self, **options):
        try:
            split = parse_split(options['split'])
        except ValueError as exc:
            raise usage_error(str(exc)) from None

        checkpoint = load_checkpoint(options['checkpoint'])
        archive_path = options['archive'] or checkpoint.metadata.get('data.archive')
        annotations_path = options['annotations'] or checkpoint.metadata.get('data.annotations')
        if not archive_path or not annotations_path:
            raise usage_error("checkpoint records no data paths; pass --archive and --annotations")

        archive = read_archive(archive_path)
        instances = [
            instance for instance in load_annotations(annotations_path)
            if instance.split == split and instance.labeled
        ]
        if not instances:
            raise EmptySplitError(f"split {split} has no labeled instances in {annotations_path}")

        result, predictions = evaluate_model(checkpoint.params, instances, archive)
        ties = sum(1 for prediction in predictions if prediction.tie)
        logger.info(
            f"Evaluated {options['checkpoint']} on {split}",
            extra={'split': str(split), 'instances': len(instances), 'ties': ties},
        )
        self.stdout.write(result.as_line())
        return {'split': str(split), 'instances': len(instances), 'result': result.as_line()}
