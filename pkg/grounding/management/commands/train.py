"""
Management command to train one variant of the grounding network.

Usage:
    python manage.py train --config runs/base.conf --variant full --seed 3

Prints one progress line per epoch and writes best.vlgc, run_record.txt and
config.txt into --out (default: VLG_RUNS_DIR/<variant>-seed<seed>).
"""

import logging
from pathlib import Path

from django.conf import settings

from grounding.conf import model_for_archive, parse_overrides, resolve_config, write_config
from grounding.evaluation import write_plot_data
from grounding.features import read_archive
from grounding.management.base import GroundingCommand, usage_error
from grounding.snare import load_annotations
from grounding.training import RECORD_FILENAME, train

logger = logging.getLogger(__name__)

CONFIG_FILENAME = 'config.txt'


def override_flags(options) -> dict[str, str]:
    """Config overrides from --set plus the shortcut flags shared by train and ablate."""
    overrides = parse_overrides(options.get('set'))
    shortcuts = {
        'model.variant': options.get('variant'),
        'train.seed': options.get('seed'),
        'data.archive': options.get('archive'),
        'data.annotations': options.get('annotations'),
    }
    overrides.update({key: str(value) for key, value in shortcuts.items() if value is not None})
    return overrides


def load_training_data(config):
    """Read the configured archive and labeled annotations."""
    if not config.data.archive or not config.data.annotations:
        raise usage_error("data.archive and data.annotations must be set (config file, --set or flags)")
    archive = read_archive(config.data.archive)
    instances = [instance for instance in load_annotations(config.data.annotations) if instance.labeled]
    return archive, instances


class Command(GroundingCommand):
    help = 'Train the grounding network and keep the best validation checkpoint'

    def add_command_arguments(self, parser):
        parser.add_argument('--config', help='key=value config file (model.*, train.*, data.*)')
        parser.add_argument('--variant', help='full, visiolinguistic_only, mlp_fusion or voxel_only')
        parser.add_argument('--seed', type=int, help='Training seed (default: train.seed or VLG_SEED)')
        parser.add_argument('--archive', help='Feature archive (overrides data.archive)')
        parser.add_argument('--annotations', help='Annotation file or directory (overrides data.annotations)')
        parser.add_argument('--out', help='Run directory (default: VLG_RUNS_DIR/<variant>-seed<seed>)')
        parser.add_argument('--plot-data', help='Write epoch,valid_all CSV to this path')
        parser.add_argument(
            '--set',
            action='append',
            default=[],
            metavar='KEY=VALUE',
            help='Override a config key (repeatable)',
        )

    def run(self, **options):
        config = resolve_config(options['config'], override_flags(options), self.default_seed())
        archive, instances = load_training_data(config)
        model_cfg = model_for_archive(config, archive.manifest)

        out_dir = Path(options['out'] or settings.VLG_RUNS_DIR / f"{model_cfg.variant}-seed{config.train.seed}")
        out_dir.mkdir(parents=True, exist_ok=True)
        write_config(config, out_dir / CONFIG_FILENAME)

        def report(outcome):
            self.stdout.write(
                f"epoch {outcome.epoch}/{config.train.epochs} step={outcome.step} "
                f"train_loss={outcome.train_loss:.6f} {outcome.valid.as_line()}"
            )

        metadata = {
            'data.archive': str(Path(config.data.archive).resolve()),
            'data.annotations': str(Path(config.data.annotations).resolve()),
        }
        record, _ = train(
            config.train, model_cfg, instances, archive,
            out_dir=out_dir, metadata=metadata, on_epoch=report,
        )

        if options['plot_data']:
            write_plot_data(
                [(epoch.epoch, epoch.valid.all) for epoch in record.epochs],
                options['plot_data'],
                header=('epoch', 'valid_all'),
            )

        record_path = out_dir / RECORD_FILENAME
        self.record_training_run(record, record_path)

        best = record.best
        self.stdout.write(self.style.SUCCESS(
            f"best_epoch={record.best_epoch} best_valid_all={best.valid.all:.4f} record={record_path}"
        ))
        return {
            'variant': record.variant,
            'seed': record.seed,
            'best_epoch': record.best_epoch,
            'steps': record.steps,
            'record_path': str(record_path),
        }
