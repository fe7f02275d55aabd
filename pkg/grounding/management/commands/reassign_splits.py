"""
Management command to align a reconstruction pretraining split with SNARE.

Usage:
    python manage.py reassign_splits --pretrain shapenet_splits.csv \
        --snare /data/snare/amt/folds_adversarial --out shapenet_splits_snare.csv

Every pretraining object that also appears in SNARE is moved into the SNARE
split it belongs to, so no object seen while pretraining the voxel encoder
shows up in a SNARE evaluation split under a different role.
"""

import logging

from django.core.management.base import CommandError

from grounding.management.base import EXIT_IO, GroundingCommand
from grounding.snare import load_annotations, read_split_csv, reassign_split, snare_split_assignment, write_split_csv

logger = logging.getLogger(__name__)


class Command(GroundingCommand):
    help = 'Move pretraining objects into their SNARE split'

    def add_command_arguments(self, parser):
        parser.add_argument('--pretrain', required=True, help='object_id,split CSV of the pretraining set')
        parser.add_argument('--snare', required=True, help='SNARE annotation directory or file')
        parser.add_argument('--out', required=True, help='Where to write the reassigned object_id,split CSV')

    def run(self, **options):
        try:
            pretrain = read_split_csv(options['pretrain'])
        except ValueError as exc:
            raise CommandError(str(exc), returncode=EXIT_IO) from None
        snare = snare_split_assignment(load_annotations(options['snare']))

        reassigned = reassign_split(pretrain, snare)
        moved = sum(1 for object_id, split in reassigned.items() if split != pretrain[object_id])
        write_split_csv(reassigned, options['out'])

        self.stdout.write(f"objects={len(reassigned)}")
        self.stdout.write(f"moved={moved}")
        logger.info(f"Reassigned {moved} of {len(reassigned)} pretraining objects", extra={'moved': moved})
        return {'objects': len(reassigned), 'moved': moved}
