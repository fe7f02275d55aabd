"""
Tests for accuracy, multi-seed aggregation, Welch's t-test and result tables.
"""

import math

import numpy as np
from django.test import SimpleTestCase
from scipy import integrate, special, stats

from grounding import evaluation
from grounding.evaluation import CategoryAccuracy, ResultRow, StatisticsError
from grounding.network import ScorePair, init_params
from grounding.snare import ReferenceInstance

from .helpers import TempDirMixin, tiny_dataset, tiny_model_config


def instances(*categories):
    return [
        ReferenceInstance(f"t{i}", f"d{i}", f"w{i}", category, 'valid')
        for i, category in enumerate(categories)
    ]


def run(visual, blind, count=100):
    """A CategoryAccuracy with the given percentages over count instances each."""
    return CategoryAccuracy(round(visual * count / 100), count, round(blind * count / 100), count)


# =============================================================================
# Accuracy
# =============================================================================

class AccuracyTests(SimpleTestCase):

    def test_four_instance_example(self):
        """2 visual, 2 blind; predictions [0, 1, 0, 0] give 50 / 100 / 75."""
        result = evaluation.accuracy([0, 1, 0, 0], instances('visual', 'visual', 'blind', 'blind'))
        self.assertEqual((result.visual, result.blind, result.all), (50.0, 100.0, 75.0))

    def test_all_is_over_the_union(self):
        """1 visual correct of 1, 1 blind correct of 3: all is 50, not the mean 66.7."""
        result = evaluation.accuracy([0, 0, 1, 1], instances('visual', 'blind', 'blind', 'blind'))
        self.assertEqual(result.all, 50.0)

    def test_missing_category_is_undefined(self):
        result = evaluation.accuracy([0, 1], instances('visual', 'visual'))
        self.assertIsNone(result.blind)
        self.assertEqual(result.as_line(), 'visual=50.0000 blind=n/a all=50.0000')

    def test_accepts_score_pairs(self):
        predictions = [ScorePair(0.9, 0.1, 0, False), ScorePair(0.2, 0.7, 1, False)]
        result = evaluation.accuracy(predictions, instances('blind', 'blind'))
        self.assertEqual(result.blind, 50.0)

    def test_length_mismatch(self):
        with self.assertRaises(ValueError):
            evaluation.accuracy([0], instances('visual', 'blind'))

    def test_parse_accuracy_line(self):
        self.assertEqual(
            evaluation.parse_accuracy_line('visual=50.0000 blind=n/a all=50.0000'),
            {'visual': 50.0, 'blind': None, 'all': 50.0},
        )

    def test_evaluate_model_counts_every_instance(self):
        dataset = tiny_dataset()
        params = init_params(tiny_model_config(), 0)
        result, predictions = evaluation.evaluate_model(params, dataset.instances, dataset.archive)
        self.assertEqual(len(predictions), len(dataset.instances))
        self.assertEqual(result.visual_count + result.blind_count, len(dataset.instances))


class AggregateRunsTests(SimpleTestCase):

    def test_mean_and_sample_std(self):
        aggregate = evaluation.aggregate_runs([run(90, 70), run(92, 74), run(94, 78)])
        self.assertAlmostEqual(aggregate.means['visual'], 92.0)
        self.assertAlmostEqual(aggregate.stds['visual'], 2.0)
        self.assertAlmostEqual(aggregate.stds['blind'], 4.0)
        self.assertEqual(aggregate.runs, 3)

    def test_single_run_has_no_std(self):
        aggregate = evaluation.aggregate_runs([run(90, 70)])
        self.assertEqual(aggregate.means['all'], 80.0)
        self.assertIsNone(aggregate.stds['all'])

    def test_empty(self):
        with self.assertRaises(StatisticsError):
            evaluation.aggregate_runs([])


# =============================================================================
# Statistics
# =============================================================================

WELCH_FIXTURES = [
    ([91.2, 90.8, 91.6], [89.8, 90.3, 89.4]),
    ([78.4, 77.7, 79.1, 78.5], [75.3, 76.0, 74.6]),
    ([84.9, 84.6, 85.2], [84.0, 83.8, 84.2, 84.1, 83.9]),
    ([1.0, 2.0, 3.0, 4.0, 5.0], [2.0, 4.0, 6.0, 8.0, 10.0, 12.0]),
    ([0.1, 0.2], [10.5, 9.7]),
]


class WelchTests(SimpleTestCase):
    """Welch's t-test against scipy and against quadrature of the t density."""

    def test_matches_scipy(self):
        for a, b in WELCH_FIXTURES:
            with self.subTest(a=a, b=b):
                ours = evaluation.welch_t(a, b)
                reference = stats.ttest_ind(a, b, equal_var=False)
                self.assertAlmostEqual(ours.t_statistic, float(reference.statistic), delta=1e-9)
                self.assertAlmostEqual(ours.p_value, float(reference.pvalue), delta=1e-9)

    def test_tail_matches_quadrature(self):
        for dof in (1.0, 2.5, 4.0, 11.3, 30.0):
            for t in (0.0, 0.4, 1.0, 2.2, 5.0):
                with self.subTest(t=t, dof=dof):
                    tail, _ = integrate.quad(stats.t.pdf, abs(t), math.inf, args=(dof,), epsabs=1e-12)
                    self.assertAlmostEqual(evaluation.student_t_two_tailed(t, dof), 2 * tail, delta=1e-6)

    def test_incomplete_beta_matches_scipy(self):
        for x in (0.01, 0.3, 0.5, 0.77, 0.99):
            for a, b in ((0.5, 0.5), (1.0, 3.0), (2.5, 0.5), (7.0, 4.0), (30.0, 0.5)):
                with self.subTest(x=x, a=a, b=b):
                    self.assertAlmostEqual(
                        evaluation.regularized_incomplete_beta(x, a, b), float(special.betainc(a, b, x)),
                        delta=1e-12,
                    )

    def test_incomplete_beta_edges(self):
        self.assertEqual(evaluation.regularized_incomplete_beta(0.0, 2.0, 3.0), 0.0)
        self.assertEqual(evaluation.regularized_incomplete_beta(1.0, 2.0, 3.0), 1.0)
        with self.assertRaises(StatisticsError):
            evaluation.regularized_incomplete_beta(1.5, 2.0, 3.0)
        with self.assertRaises(StatisticsError):
            evaluation.regularized_incomplete_beta(0.5, 0.0, 3.0)

    def test_cdf_is_symmetric(self):
        self.assertAlmostEqual(evaluation.student_t_cdf(0.0, 5.0), 0.5, places=14)
        self.assertAlmostEqual(
            evaluation.student_t_cdf(1.3, 7.0) + evaluation.student_t_cdf(-1.3, 7.0), 1.0, places=14,
        )
        self.assertAlmostEqual(evaluation.student_t_cdf(2.0, 9.0), float(stats.t.cdf(2.0, 9.0)), delta=1e-10)

    def test_p_value_bounds(self):
        for a, b in WELCH_FIXTURES:
            p = evaluation.welch_t(a, b).p_value
            self.assertGreaterEqual(p, 0.0)
            self.assertLessEqual(p, 1.0)

    def test_identical_constant_samples(self):
        result = evaluation.welch_t([80.0, 80.0, 80.0], [80.0, 80.0, 80.0])
        self.assertTrue(result.degenerate)
        self.assertEqual((result.t_statistic, result.p_value), (0.0, 1.0))

    def test_constant_samples_with_different_means(self):
        with self.assertRaises(StatisticsError):
            evaluation.welch_t([80.0, 80.0], [81.0, 81.0])

    def test_needs_two_values_per_sample(self):
        with self.assertRaises(StatisticsError):
            evaluation.welch_t([80.0], [81.0, 82.0])

    def test_invalid_dof(self):
        with self.assertRaises(StatisticsError):
            evaluation.student_t_two_tailed(1.0, 0.0)

    def test_compare_runs(self):
        baseline = [run(91, 78), run(92, 79), run(90, 77)]
        alternative = [run(89, 75), run(90, 76), run(88, 75)]
        comparisons = evaluation.compare_runs(baseline, alternative, 'mlp_fusion')
        self.assertEqual([c.field for c in comparisons], ['visual', 'blind', 'all'])
        for comparison in comparisons:
            self.assertEqual(comparison.name, 'mlp_fusion')
            self.assertIsNotNone(comparison.result)
            self.assertRegex(comparison.p_label, r'^\d\.\d{3}\*?$')

    def test_compare_single_runs_has_no_result(self):
        comparisons = evaluation.compare_runs([run(91, 78)], [run(89, 75)], 'voxel_only')
        self.assertTrue(all(c.result is None and c.p_label == '-' for c in comparisons))

    def test_significance_marker(self):
        small = evaluation.Comparison('x', 'all', evaluation.TestResult(3.0, 4.0, 0.04))
        large = evaluation.Comparison('x', 'all', evaluation.TestResult(1.0, 4.0, 0.4))
        self.assertEqual(small.p_label, '0.040*')
        self.assertEqual(large.p_label, '0.400')


# =============================================================================
# Tables
# =============================================================================

VAL_ROWS = [
    ResultRow('ViLBERT', 'val', 89.5, 76.6, 83.1),
    ResultRow('MATCH', 'val', 89.2, 75.2, 82.2, 0.9, 0.7, 0.4),
    ResultRow('LAGOR', 'val', 89.8, 75.3, 82.6, 0.4, 0.7, 0.4),
    ResultRow('VLG (Ours)', 'val', 91.2, 78.4, 84.9, 0.4, 0.7, 0.3),
]


class RenderTableTests(TempDirMixin, SimpleTestCase):
    """Tests for fixed-width result tables."""

    def test_published_row_is_byte_exact(self):
        table = evaluation.render_table([VAL_ROWS[-1]], 'val')
        self.assertEqual(
            table,
            'Split: val\n'
            'Model      Visual     Blind      All\n'
            + '-' * 43 + '\n'
            'VLG (Ours) 91.2 (0.4) 78.4 (0.7) 84.9 (0.3)\n',
        )

    def test_rows_without_std(self):
        table = evaluation.render_table(VAL_ROWS, 'val')
        self.assertIn('ViLBERT    89.5       76.6       83.1\n', table)

    def test_only_matching_split(self):
        rows = VAL_ROWS + [ResultRow('VLG (Ours)', 'test', 86.0, 71.7, 79.0)]
        table = evaluation.render_table(rows, 'test')
        self.assertEqual(table.splitlines()[-1], 'VLG (Ours) 86.0       71.7       79.0')
        self.assertEqual(len(table.splitlines()), 4)

    def test_missing_values_render_as_dash(self):
        table = evaluation.render_table([ResultRow('Partial', 'val', visual=70.0)], 'val')
        self.assertEqual(table.splitlines()[-1], 'Partial    70.0       -          -')

    def test_render_is_deterministic(self):
        self.assertEqual(evaluation.render_table(VAL_ROWS, 'val'), evaluation.render_table(VAL_ROWS, 'val'))

    def test_parse_inverts_render(self):
        self.assertEqual(evaluation.parse_table(evaluation.render_table(VAL_ROWS, 'val')), VAL_ROWS)

    def test_parse_rejects_other_text(self):
        with self.assertRaises(ValueError):
            evaluation.parse_table('hello\nworld\n')

    def test_from_aggregate(self):
        aggregate = evaluation.aggregate_runs([run(90, 70), run(92, 74)])
        row = ResultRow.from_aggregate('full', 'valid', aggregate)
        self.assertEqual(row.cell('visual'), '91.0 (1.4)')

    def test_result_rows_file_round_trip(self):
        path = self.tmp / 'results.txt'
        evaluation.write_result_rows(VAL_ROWS, path)
        self.assertEqual(evaluation.read_result_rows(path), VAL_ROWS)

    def test_result_rows_file_rejects_unknown_keys(self):
        path = self.tmp / 'results.txt'
        path.write_text('name=x split=val colour=3\n')
        with self.assertRaises(ValueError):
            evaluation.read_result_rows(path)

    def test_plot_data(self):
        path = self.tmp / 'curve.csv'
        evaluation.write_plot_data([(1, 50.0), (2, 62.5)], path, header=('epoch', 'valid_all'))
        self.assertEqual(path.read_text(), 'epoch,valid_all\n1,50.0\n2,62.5\n')

    def test_render_comparisons(self):
        comparisons = [
            evaluation.Comparison('mlp_fusion', 'visual', evaluation.TestResult(1.0, 4.0, 0.5)),
            evaluation.Comparison('mlp_fusion', 'blind', evaluation.TestResult(3.0, 4.0, 0.05)),
            evaluation.Comparison('mlp_fusion', 'all', None),
        ]
        self.assertEqual(
            evaluation.render_comparisons(comparisons).splitlines(),
            [
                'Model      Visual     Blind      All',
                '-' * 43,
                'mlp_fusion 0.500      0.050*     -',
            ],
        )
