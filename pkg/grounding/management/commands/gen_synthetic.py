"""
Management command to generate a synthetic reference game dataset.

Usage:
    python manage.py gen_synthetic --objects 64 --pairs 128 --seed 1 --out data/synth

Writes features.vlgf, annotations.jsonl and attributes.csv into --out. Color
lives only in the view embeddings and geometry only in the factors, so the
dataset separates what each branch of the network can see.
"""

import logging

from grounding.conf import parse_overrides, resolve_config
from grounding.features import generate_dataset, write_dataset
from grounding.management.base import GroundingCommand
from grounding.snare import Category, Split

logger = logging.getLogger(__name__)

DEFAULT_OBJECTS = 64
DEFAULT_PAIRS = 128


class Command(GroundingCommand):
    help = 'Generate a deterministic synthetic feature archive and annotations'

    def add_command_arguments(self, parser):
        parser.add_argument(
            '--objects',
            type=int,
            default=DEFAULT_OBJECTS,
            help=f'Number of objects (default: {DEFAULT_OBJECTS})',
        )
        parser.add_argument(
            '--pairs',
            type=int,
            default=DEFAULT_PAIRS,
            help=f'Number of reference game instances (default: {DEFAULT_PAIRS})',
        )
        parser.add_argument('--seed', type=int, help='Generator seed (default: VLG_SEED)')
        parser.add_argument('--out', required=True, help='Output directory')
        parser.add_argument('--config', help='key=value file with data.* generator settings')
        parser.add_argument(
            '--set',
            action='append',
            default=[],
            metavar='KEY=VALUE',
            help='Override a config key (repeatable)',
        )

    def run(self, **options):
        config = resolve_config(options['config'], parse_overrides(options['set']), self.default_seed())
        seed = options['seed'] if options['seed'] is not None else config.train.seed

        dataset = generate_dataset(
            options['objects'],
            options['pairs'],
            seed,
            config.data.synth_config(),
            valid_fraction=config.data.valid_fraction,
            test_fraction=config.data.test_fraction,
        )
        paths = write_dataset(dataset, options['out'])

        counts = {
            'objects': len(dataset.archive.objects),
            'descriptions': len(dataset.archive.descriptions),
            'instances': len(dataset.instances),
            'visual': dataset.count(category=Category.VISUAL),
            'blind': dataset.count(category=Category.BLIND),
        }
        counts.update({split.value: dataset.count(split=split) for split in Split})

        for key, value in counts.items():
            self.stdout.write(f"{key}={value}")
        for name, path in paths.items():
            self.stdout.write(f"{name}={path}")

        logger.info(f"Generated synthetic dataset with seed {seed}", extra=counts)
        return {'seed': seed, **counts}
