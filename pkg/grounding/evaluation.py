"""
Reference game evaluation and reporting.

Accuracy is stratified by description category (visual / blind) with "all"
computed over the union of instances. Multi-seed runs are summarized by
mean and sample standard deviation, and compared with Welch's two-tailed
t-test. The Student-t tail comes from the regularized incomplete beta
function, evaluated with a continued fraction.

Result tables are fixed-width text:

    Split: val
    Model      Visual     Blind      All
    -------------------------------------------
    VLG (Ours) 91.2 (0.4) 78.4 (0.7) 84.9 (0.3)
"""

import csv
import math
import re
import shlex
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .features import FeatureArchive
from .network import ScorePair, VoxelGrounder, forward_instance
from .snare import Category, ReferenceInstance

FIELDS = ('visual', 'blind', 'all')
SIGNIFICANCE_LEVEL = 0.1
CELL_WIDTH = 10
COLUMN_GAP = ' '
NAME_HEADER = 'Model'

# Continued fraction settings
_CF_EPSILON = 1e-15
_CF_TINY = 1e-300
_CF_MAX_ITERATIONS = 10_000


class StatisticsError(ValueError):
    """Inputs outside what a statistic is defined for."""


@dataclass(frozen=True)
class CategoryAccuracy:
    """Correct/total counts per category; percentages are derived."""
    visual_correct: int = 0
    visual_count: int = 0
    blind_correct: int = 0
    blind_count: int = 0

    @staticmethod
    def _percent(correct: int, count: int) -> float | None:
        return None if count == 0 else 100.0 * correct / count

    @property
    def visual(self) -> float | None:
        return self._percent(self.visual_correct, self.visual_count)

    @property
    def blind(self) -> float | None:
        return self._percent(self.blind_correct, self.blind_count)

    @property
    def all(self) -> float | None:
        return self._percent(self.visual_correct + self.blind_correct, self.visual_count + self.blind_count)

    def value(self, name: str) -> float | None:
        return getattr(self, name)

    def as_line(self) -> str:
        """Machine-readable result line: visual=... blind=... all=..."""
        return ' '.join(f"{name}={_format_percent(self.value(name))}" for name in FIELDS)


def _format_percent(value: float | None) -> str:
    return 'n/a' if value is None else f"{value:.4f}"


def parse_accuracy_line(line: str) -> dict[str, float | None]:
    values = {}
    for token in line.split():
        key, _, text = token.partition('=')
        values[key] = None if text == 'n/a' else float(text)
    return values


def accuracy(predictions: Sequence, instances: Sequence[ReferenceInstance]) -> CategoryAccuracy:
    """
    Category accuracy of predicted candidate indices (or ScorePairs).

    Candidate 0 is always the target, so a prediction of 0 is correct.
    """
    if len(predictions) != len(instances):
        raise ValueError(f"{len(predictions)} predictions for {len(instances)} instances")

    counts = {Category.VISUAL: [0, 0], Category.BLIND: [0, 0]}
    for prediction, instance in zip(predictions, instances):
        index = getattr(prediction, 'predicted_index', prediction)
        if instance.category not in counts:
            raise ValueError(f"unknown category {instance.category!r}")
        counts[instance.category][0] += int(index == 0)
        counts[instance.category][1] += 1

    return CategoryAccuracy(
        visual_correct=counts[Category.VISUAL][0],
        visual_count=counts[Category.VISUAL][1],
        blind_correct=counts[Category.BLIND][0],
        blind_count=counts[Category.BLIND][1],
    )


def evaluate_model(
    params: VoxelGrounder,
    instances: Sequence[ReferenceInstance],
    archive: FeatureArchive,
) -> tuple[CategoryAccuracy, list[ScorePair]]:
    """Score every instance with the network and tally category accuracy."""
    predictions = [forward_instance(instance, archive, params) for instance in instances]
    return accuracy(predictions, instances), predictions


@dataclass(frozen=True)
class AggregateAccuracy:
    """Mean and sample std per field over seeds; std is None for a single run."""
    runs: int
    means: dict[str, float | None]
    stds: dict[str, float | None]
    samples: dict[str, list[float]] = field(default_factory=dict, repr=False)


def aggregate_runs(runs: Sequence[CategoryAccuracy]) -> AggregateAccuracy:
    if not runs:
        raise StatisticsError("cannot aggregate an empty list of runs")

    means, stds, samples = {}, {}, {}
    for name in FIELDS:
        values = [run.value(name) for run in runs if run.value(name) is not None]
        samples[name] = values
        if not values:
            means[name] = stds[name] = None
            continue
        means[name] = float(np.mean(values))
        stds[name] = float(np.std(values, ddof=1)) if len(values) > 1 else None
    return AggregateAccuracy(runs=len(runs), means=means, stds=stds, samples=samples)


# =============================================================================
# Welch's t-test
# =============================================================================

@dataclass(frozen=True)
class TestResult:
    t_statistic: float
    dof: float
    p_value: float
    degenerate: bool = False

    @property
    def significant(self) -> bool:
        return self.p_value < SIGNIFICANCE_LEVEL


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    """Modified Lentz evaluation of the incomplete beta continued fraction."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d

    for m in range(1, _CF_MAX_ITERATIONS + 1):
        m2 = 2 * m
        # Even step
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = _CF_TINY if abs(d) < _CF_TINY else d
        c = 1.0 + aa / c
        c = _CF_TINY if abs(c) < _CF_TINY else c
        d = 1.0 / d
        h *= d * c
        # Odd step
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = _CF_TINY if abs(d) < _CF_TINY else d
        c = 1.0 + aa / c
        c = _CF_TINY if abs(c) < _CF_TINY else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPSILON:
            return h
    raise StatisticsError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def regularized_incomplete_beta(x: float, a: float, b: float) -> float:
    """I_x(a, b) for x in [0, 1] and a, b > 0."""
    if not 0.0 <= x <= 1.0:
        raise StatisticsError(f"x must lie in [0, 1], got {x}")
    if a <= 0 or b <= 0:
        raise StatisticsError("shape parameters must be positive")
    if x == 0.0 or x == 1.0:
        return x

    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    # The fraction converges fastest below the mean; use symmetry above it
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def student_t_two_tailed(t: float, dof: float) -> float:
    """P(|T| >= |t|) for Student's t with dof degrees of freedom."""
    if dof <= 0:
        raise StatisticsError(f"degrees of freedom must be positive, got {dof}")
    if math.isinf(t):
        return 0.0
    p = regularized_incomplete_beta(dof / (dof + t * t), dof / 2.0, 0.5)
    return min(1.0, max(0.0, p))


def student_t_cdf(t: float, dof: float) -> float:
    tail = student_t_two_tailed(t, dof) / 2.0
    return 1.0 - tail if t >= 0 else tail


def welch_t(sample_a: Sequence[float], sample_b: Sequence[float]) -> TestResult:
    """
    Welch's unequal-variance two-sample t-test, two-tailed.

    When both samples have zero variance and equal means the result is
    t=0, p=1 with degenerate=True; zero variance with different means is
    undefined and raises.
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise StatisticsError(f"each sample needs at least 2 values, got {a.size} and {b.size}")

    mean_a, mean_b = float(a.mean()), float(b.mean())
    var_a, var_b = float(a.var(ddof=1)), float(b.var(ddof=1))
    se_a, se_b = var_a / a.size, var_b / b.size
    standard_error_sq = se_a + se_b

    if standard_error_sq == 0.0:
        if mean_a == mean_b:
            return TestResult(t_statistic=0.0, dof=float(a.size + b.size - 2), p_value=1.0, degenerate=True)
        raise StatisticsError("both samples have zero variance but different means")

    t = (mean_a - mean_b) / math.sqrt(standard_error_sq)
    dof = standard_error_sq ** 2 / (se_a ** 2 / (a.size - 1) + se_b ** 2 / (b.size - 1))
    return TestResult(t_statistic=t, dof=dof, p_value=student_t_two_tailed(t, dof))


@dataclass(frozen=True)
class Comparison:
    """Welch test of a baseline against one alternative on one accuracy field."""
    name: str
    field: str
    result: TestResult | None

    @property
    def p_label(self) -> str:
        if self.result is None:
            return '-'
        marker = '*' if self.result.significant else ''
        return f"{self.result.p_value:.3f}{marker}"


def compare_runs(
    baseline: Sequence[CategoryAccuracy],
    alternative: Sequence[CategoryAccuracy],
    name: str,
) -> list[Comparison]:
    """Welch tests on every field; fields without enough samples yield result None."""
    comparisons = []
    for name_field in FIELDS:
        a = [run.value(name_field) for run in baseline if run.value(name_field) is not None]
        b = [run.value(name_field) for run in alternative if run.value(name_field) is not None]
        try:
            result = welch_t(a, b)
        except StatisticsError:
            result = None
        comparisons.append(Comparison(name=name, field=name_field, result=result))
    return comparisons


# =============================================================================
# Result tables
# =============================================================================

@dataclass(frozen=True)
class ResultRow:
    name: str
    split: str
    visual: float | None = None
    blind: float | None = None
    all: float | None = None
    visual_std: float | None = None
    blind_std: float | None = None
    all_std: float | None = None

    @classmethod
    def from_aggregate(cls, name: str, split: str, aggregate: AggregateAccuracy) -> 'ResultRow':
        return cls(
            name=name,
            split=split,
            **{f: aggregate.means[f] for f in FIELDS},
            **{f"{f}_std": aggregate.stds[f] for f in FIELDS},
        )

    def cell(self, name: str) -> str:
        value = getattr(self, name)
        if value is None:
            return '-'
        std = getattr(self, f"{name}_std")
        return f"{value:.1f}" if std is None else f"{value:.1f} ({std:.1f})"


def render_table(rows: Iterable[ResultRow], split: str) -> str:
    """Fixed-width table of the rows tagged with split; byte-deterministic."""
    rows = [row for row in rows if row.split == split]
    name_width = max([len(NAME_HEADER)] + [len(row.name) for row in rows])

    def line(name: str, cells: list[str]) -> str:
        padded = [cell.ljust(CELL_WIDTH) for cell in cells]
        return (name.ljust(name_width) + COLUMN_GAP + COLUMN_GAP.join(padded)).rstrip()

    header = line(NAME_HEADER, ['Visual', 'Blind', 'All'])
    lines = [f"Split: {split}", header, '-' * (name_width + 3 * (CELL_WIDTH + len(COLUMN_GAP)))]
    lines.extend(line(row.name, [row.cell(name) for name in FIELDS]) for row in rows)
    return '\n'.join(lines) + '\n'


_CELL_PATTERN = re.compile(r'(-|\d+(?:\.\d+)?)(?: \((\d+(?:\.\d+)?)\))?')


def parse_table(text: str) -> list[ResultRow]:
    """Inverse of render_table."""
    lines = text.splitlines()
    if len(lines) < 3 or not lines[0].startswith('Split: '):
        raise ValueError("not a rendered result table")
    split = lines[0][len('Split: '):]
    name_width = lines[1].index('Visual') - len(COLUMN_GAP)

    rows = []
    for line in lines[3:]:
        if not line.strip():
            continue
        name = line[:name_width].rstrip()
        cells = _CELL_PATTERN.findall(line[name_width:])
        if len(cells) != len(FIELDS):
            raise ValueError(f"expected {len(FIELDS)} cells in row {line!r}")
        values = {}
        for name_field, (value, std) in zip(FIELDS, cells):
            values[name_field] = None if value == '-' else float(value)
            values[f"{name_field}_std"] = float(std) if std else None
        rows.append(ResultRow(name=name, split=split, **values))
    return rows


_ROW_KEYS = ('name', 'split') + FIELDS + tuple(f"{f}_std" for f in FIELDS)


def write_result_rows(rows: Iterable[ResultRow], path) -> None:
    """One row per line as shell-quoted key=value tokens; absent values are omitted."""
    lines = []
    for row in rows:
        tokens = [f"name={shlex.quote(row.name)}", f"split={shlex.quote(row.split)}"]
        for key in _ROW_KEYS[2:]:
            value = getattr(row, key)
            if value is not None:
                tokens.append(f"{key}={value!r}")
        lines.append(' '.join(tokens))
    Path(path).write_text('\n'.join(lines) + '\n', encoding='utf-8')


def read_result_rows(path) -> list[ResultRow]:
    rows = []
    for line_number, line in enumerate(Path(path).read_text(encoding='utf-8').splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith('#'):
            continue
        values = {}
        for token in shlex.split(line):
            key, sep, value = token.partition('=')
            if not sep or key not in _ROW_KEYS:
                raise ValueError(f"{path}:{line_number}: unexpected token {token!r}")
            values[key] = value if key in ('name', 'split') else float(value)
        if 'name' not in values or 'split' not in values:
            raise ValueError(f"{path}:{line_number}: rows need name and split")
        rows.append(ResultRow(**values))
    return rows


def write_plot_data(points: Iterable[tuple[float, float]], path, header: tuple[str, str] = ('x', 'y')) -> None:
    with open(path, 'w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(header)
        for x, y in points:
            writer.writerow([x, y])


def render_comparisons(comparisons: Iterable[Comparison]) -> str:
    """p-value table with one row per alternative, in first-seen order."""
    by_name: dict[str, dict[str, str]] = {}
    for comparison in comparisons:
        by_name.setdefault(comparison.name, {})[comparison.field] = comparison.p_label
    name_width = max([len(NAME_HEADER)] + [len(name) for name in by_name])

    def line(name: str, cells: list[str]) -> str:
        padded = [cell.ljust(CELL_WIDTH) for cell in cells]
        return (name.ljust(name_width) + COLUMN_GAP + COLUMN_GAP.join(padded)).rstrip()

    lines = [line(NAME_HEADER, ['Visual', 'Blind', 'All'])]
    lines.append('-' * (name_width + 3 * (CELL_WIDTH + len(COLUMN_GAP))))
    lines.extend(line(name, [labels.get(f, '-') for f in FIELDS]) for name, labels in by_name.items())
    return '\n'.join(lines) + '\n'
