"""
Management command to run the ablation sweep.

Usage:
    python manage.py ablate --config runs/base.conf --seeds 3 --jobs 4

Trains every variant with k consecutive seeds (train.seed, train.seed + 1,
...), scores each best checkpoint on data.eval_split and reports mean (std)
per category plus Welch p-values of full against each ablation. Runs are
reported in (variant, seed) order whatever order the workers finish in.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from django.conf import settings
from django.template.loader import render_to_string

from grounding.conf import model_for_archive, resolve_config, write_config
from grounding.evaluation import (
    SIGNIFICANCE_LEVEL,
    ResultRow,
    aggregate_runs,
    compare_runs,
    render_comparisons,
    render_table,
    write_result_rows,
)
from grounding.management.base import GroundingCommand, usage_error
from grounding.management.commands.train import load_training_data, override_flags
from grounding.network import Variant
from grounding.snare import parse_split
from grounding.training import RECORD_FILENAME, TrainingJob, run_training_job

logger = logging.getLogger(__name__)

BASELINE = Variant.FULL
RESULTS_FILENAME = 'results.txt'
REPORT_FILENAME = 'report.txt'
DEFAULT_SEEDS = 3


def parse_variants(text: str | None) -> list[Variant]:
    if not text:
        return list(Variant)
    variants = []
    for name in (part.strip() for part in text.split(',')):
        try:
            variant = Variant(name)
        except ValueError:
            allowed = ', '.join(member.value for member in Variant)
            raise usage_error(f"unknown variant {name!r}; allowed: {allowed}") from None
        if variant not in variants:
            variants.append(variant)
    return variants


class Command(GroundingCommand):
    help = 'Train and compare every model variant over several seeds'

    def add_command_arguments(self, parser):
        parser.add_argument('--config', help='key=value config file (model.*, train.*, data.*)')
        parser.add_argument(
            '--seeds',
            type=int,
            default=DEFAULT_SEEDS,
            help=f'Seeds per variant (default: {DEFAULT_SEEDS})',
        )
        parser.add_argument('--jobs', type=int, default=1, help='Concurrent training runs (default: 1)')
        parser.add_argument('--variants', help='Comma-separated subset of variants (default: all four)')
        parser.add_argument('--split', help='Evaluation split (default: data.eval_split)')
        parser.add_argument('--archive', help='Feature archive (overrides data.archive)')
        parser.add_argument('--annotations', help='Annotation file or directory (overrides data.annotations)')
        parser.add_argument('--out', help='Output directory (default: VLG_RUNS_DIR/ablation)')
        parser.add_argument(
            '--set',
            action='append',
            default=[],
            metavar='KEY=VALUE',
            help='Override a config key (repeatable)',
        )

    def run(self, **options):
        if options['seeds'] < 1:
            raise usage_error(f"--seeds must be at least 1, got {options['seeds']}")
        if options['jobs'] < 1:
            raise usage_error(f"--jobs must be at least 1, got {options['jobs']}")
        variants = parse_variants(options['variants'])

        config = resolve_config(options['config'], override_flags(options), self.default_seed())
        try:
            split = parse_split(options['split'] or config.data.eval_split)
        except ValueError as exc:
            raise usage_error(str(exc)) from None
        archive, _ = load_training_data(config)
        model_cfg = model_for_archive(config, archive.manifest)

        out_root = Path(options['out'] or settings.VLG_RUNS_DIR / 'ablation')
        out_root.mkdir(parents=True, exist_ok=True)
        write_config(config, out_root / 'config.txt')

        seeds = [config.train.seed + offset for offset in range(options['seeds'])]
        jobs = [
            TrainingJob(
                model_cfg=replace(model_cfg, variant=variant),
                train_cfg=replace(config.train, seed=seed),
                archive_path=str(Path(config.data.archive).resolve()),
                annotations_path=str(Path(config.data.annotations).resolve()),
                out_dir=str(out_root / f"{variant}-seed{seed}"),
                eval_split=split,
            )
            for variant in variants
            for seed in seeds
        ]
        logger.info(
            f"Running {len(jobs)} training run(s)",
            extra={'variants': [str(v) for v in variants], 'seeds': seeds, 'jobs': options['jobs']},
        )

        if options['jobs'] > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=options['jobs']) as pool:
                results = list(pool.map(run_training_job, jobs))
        else:
            results = [run_training_job(job) for job in jobs]

        accuracies = {variant: [] for variant in variants}
        for job, result in zip(jobs, results):
            variant = job.model_cfg.variant
            accuracies[variant].append(result.accuracy)
            self.record_training_run(result.record, Path(job.out_dir) / RECORD_FILENAME)
            self.stdout.write(
                f"{variant} seed={result.record.seed} best_epoch={result.record.best_epoch} "
                f"{result.accuracy.as_line()}"
            )

        rows = [
            ResultRow.from_aggregate(str(variant), str(split), aggregate_runs(accuracies[variant]))
            for variant in variants
        ]
        results_path = out_root / RESULTS_FILENAME
        write_result_rows(rows, results_path)

        comparisons = []
        no_tests_reason = ''
        if BASELINE not in variants:
            no_tests_reason = f"{BASELINE} is not among the variants"
        elif len(seeds) < 2:
            no_tests_reason = 'a single seed per variant'
        else:
            for variant in variants:
                if variant != BASELINE:
                    comparisons.extend(compare_runs(accuracies[BASELINE], accuracies[variant], str(variant)))

        title = f"Ablation over {len(variants)} variant(s) x {len(seeds)} seed(s)"
        report = render_to_string('reports/ablation.txt', {
            'title': title,
            'title_rule': '=' * len(title),
            'variants': [str(v) for v in variants],
            'seeds': seeds,
            'split': str(split),
            'table': render_table(rows, str(split)),
            'comparisons': comparisons,
            'comparison_table': render_comparisons(comparisons) if comparisons else '',
            'baseline': str(BASELINE),
            'threshold': SIGNIFICANCE_LEVEL,
            'no_tests_reason': no_tests_reason,
            'results_path': results_path,
        })
        (out_root / REPORT_FILENAME).write_text(report, encoding='utf-8')
        self.stdout.write(report)

        return {
            'runs': len(results),
            'variants': [str(v) for v in variants],
            'seeds': seeds,
            'results_path': str(results_path),
        }
