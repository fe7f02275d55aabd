"""
SNARE-style reference game annotations.

A ReferenceInstance is one round of the game: a description, the target it
refers to, and a single distractor. Instances come from local annotation
files (JSON arrays or JSON lines) in either of two record shapes:

- named fields:   {"target": ..., "distractor": ..., "description_id": ...,
                   "category": "visual" | "blind", "split": ...}
- candidate list: {"objects": [a, b], "ans": 0 | 1, "annotation": "...",
                   "visual": true | false}

Missing splits are taken from the file name (train / val / test). Missing
description ids are derived from the annotation text. Records without an
answer index keep their candidate order and are marked unlabeled.
"""

import csv
import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

logger = logging.getLogger(__name__)


class Category(StrEnum):
    VISUAL = 'visual'
    BLIND = 'blind'


class Split(StrEnum):
    TRAIN = 'train'
    VALID = 'valid'
    TEST = 'test'


SPLIT_ALIASES = {
    'train': Split.TRAIN,
    'valid': Split.VALID,
    'val': Split.VALID,
    'validation': Split.VALID,
    'test': Split.TEST,
}

# Published dataset statistics: (object categories, unique objects, pairings)
EXPECTED_COUNTS = {
    Split.TRAIN: (207, 6153, 39104),
    Split.VALID: (7, 371, 2304),
    Split.TEST: (48, 1357, 8751),
}
COUNT_FIELDS = ('categories', 'unique_objects', 'pairings')

ANNOTATION_SUFFIXES = ('.json', '.jsonl')


class AnnotationError(ValueError):
    """One or more annotation records could not be imported."""

    def __init__(self, problems: list[tuple[int, str]], source: str = ''):
        self.problems = problems
        self.source = source
        self.record_index = problems[0][0] if problems else None
        prefix = f"{source}: " if source else ''
        details = '; '.join(f"record {index}: {message}" for index, message in problems[:5])
        more = f" (+{len(problems) - 5} more)" if len(problems) > 5 else ''
        super().__init__(f"{prefix}{len(problems)} malformed record(s): {details}{more}")

    def __reduce__(self):
        return (type(self), (self.problems, self.source))


class EmptySplitError(ValueError):
    """A split required for iteration or training holds no instances."""


def parse_split(value) -> Split:
    try:
        return SPLIT_ALIASES[str(value).strip().lower()]
    except KeyError:
        raise ValueError(f"unknown split {value!r}") from None


@dataclass(frozen=True)
class ReferenceInstance:
    """One two-candidate reference game round."""
    target_id: str
    distractor_id: str
    description_id: str
    category: Category
    split: Split
    labeled: bool = True

    def __post_init__(self):
        object.__setattr__(self, 'category', Category(self.category))
        object.__setattr__(self, 'split', parse_split(self.split))
        if self.target_id == self.distractor_id:
            raise ValueError(f"target and distractor are the same object {self.target_id!r}")


def description_id_for(text: str) -> str:
    """Stable id for an annotation that does not carry one."""
    return 'ann-' + hashlib.sha1(text.encode('utf-8')).hexdigest()[:16]


def _first(record: dict, *keys):
    for key in keys:
        if key in record and record[key] is not None:
            return record[key]
    return None


def _category_of(record: dict) -> Category:
    category = _first(record, 'category', 'style')
    if category is not None:
        try:
            return Category(str(category).lower())
        except ValueError:
            raise ValueError(f"unknown category {category!r}") from None
    visual = record.get('visual')
    if isinstance(visual, bool):
        return Category.VISUAL if visual else Category.BLIND
    raise ValueError("missing field 'category' (or boolean 'visual')")


def _description_of(record: dict) -> str:
    description_id = _first(record, 'description_id', 'annotation_id')
    if description_id is not None:
        return str(description_id)
    text = _first(record, 'annotation', 'description', 'text')
    if not text:
        raise ValueError("missing field 'description_id' (or annotation text)")
    return description_id_for(str(text))


def normalize_record(record, default_split: Split | None = None) -> ReferenceInstance:
    """Map either supported record shape onto a ReferenceInstance."""
    if not isinstance(record, dict):
        raise ValueError(f"expected an object, got {type(record).__name__}")

    labeled = True
    if 'objects' in record:
        candidates = record['objects']
        if not isinstance(candidates, list) or len(candidates) != 2:
            count = len(candidates) if isinstance(candidates, list) else 'non-list'
            raise ValueError(f"expected exactly 2 candidates, got {count}")
        answer = _first(record, 'ans', 'target_index')
        if answer is None:
            labeled = False
            answer = 0
        if type(answer) is not int or answer not in (0, 1):
            raise ValueError(f"answer index must be 0 or 1, got {answer!r}")
        target, distractor = candidates[answer], candidates[1 - answer]
    else:
        target = _first(record, 'target', 'target_id')
        distractor = _first(record, 'distractor', 'distractor_id')
        if target is None:
            raise ValueError("missing field 'target'")
        if distractor is None:
            raise ValueError("missing field 'distractor'")
        labeled = record.get('labeled', True) is not False

    split = record.get('split')
    if split is None:
        if default_split is None:
            raise ValueError("missing field 'split'")
        split = default_split

    if str(target) == str(distractor):
        raise ValueError(f"target and distractor are the same object {target!r}")

    return ReferenceInstance(
        target_id=str(target),
        distractor_id=str(distractor),
        description_id=_description_of(record),
        category=_category_of(record),
        split=parse_split(split),
        labeled=labeled,
    )


def _split_from_name(path: Path) -> Split | None:
    return SPLIT_ALIASES.get(path.stem.lower())


def _load_file(path: Path) -> list[ReferenceInstance]:
    default_split = _split_from_name(path)
    problems = []
    records = []

    if path.suffix == '.jsonl':
        for line_number, raw in enumerate(path.read_bytes().splitlines(), start=1):
            try:
                line = raw.decode('utf-8')
            except UnicodeDecodeError as exc:
                problems.append((line_number, f"not valid UTF-8 at byte {exc.start}"))
                continue
            if not line.strip():
                continue
            try:
                records.append((line_number, json.loads(line)))
            except json.JSONDecodeError as exc:
                problems.append((line_number, f"invalid JSON: {exc.msg}"))
    else:
        try:
            payload = json.loads(path.read_bytes().decode('utf-8'))
        except UnicodeDecodeError as exc:
            raise AnnotationError([(0, f"not valid UTF-8 at byte {exc.start}")], str(path)) from exc
        except json.JSONDecodeError as exc:
            raise AnnotationError([(0, f"invalid JSON: {exc.msg}")], str(path)) from exc
        if not isinstance(payload, list):
            raise AnnotationError([(0, "expected a JSON array of records")], str(path))
        records = list(enumerate(payload, start=1))

    instances = []
    for index, record in records:
        try:
            instances.append(normalize_record(record, default_split))
        except (ValueError, TypeError) as exc:
            problems.append((index, str(exc)))

    if problems:
        raise AnnotationError(sorted(problems), str(path))
    return instances


def annotation_files(directory: Path) -> list[Path]:
    """Annotation files of a SNARE directory in train, valid, test order."""
    found = []
    for stem in ('train', 'val', 'valid', 'test'):
        for suffix in ANNOTATION_SUFFIXES:
            candidate = directory / f"{stem}{suffix}"
            if candidate.is_file():
                found.append(candidate)
    if not found:
        found = sorted(p for p in directory.iterdir() if p.suffix in ANNOTATION_SUFFIXES)
    return found


def load_annotations(path) -> list[ReferenceInstance]:
    """
    Load annotations from a file or from every annotation file in a directory.

    Loading is all-or-nothing: any malformed record raises AnnotationError
    listing every problem with its record (or line) number.
    """
    path = Path(path)
    if path.is_dir():
        files = annotation_files(path)
        if not files:
            raise FileNotFoundError(f"no annotation files in {path}")
    elif path.is_file():
        files = [path]
    else:
        raise FileNotFoundError(f"annotation path {path} does not exist")

    instances = []
    for file_path in files:
        instances.extend(_load_file(file_path))
    logger.info(
        f"Loaded {len(instances)} annotation(s) from {path}",
        extra={'files': [str(p) for p in files]},
    )
    return instances


def write_annotations(instances: Iterable[ReferenceInstance], path) -> None:
    """Write instances as named-field JSON lines."""
    with open(path, 'w', encoding='utf-8', newline='\n') as handle:
        for instance in instances:
            record = {
                'target': instance.target_id,
                'distractor': instance.distractor_id,
                'description_id': instance.description_id,
                'category': instance.category.value,
                'split': instance.split.value,
            }
            if not instance.labeled:
                record['labeled'] = False
            handle.write(json.dumps(record) + '\n')


def category_counts(instances: Iterable[ReferenceInstance]) -> dict[Category, int]:
    counts = Counter(instance.category for instance in instances)
    return {category: counts.get(category, 0) for category in Category}


# =============================================================================
# Dataset statistics
# =============================================================================

@dataclass(frozen=True)
class SplitStats:
    """Counts for one split; categories is None without an object category map."""
    split: Split
    categories: int | None
    unique_objects: int
    pairings: int
    unique_pairings: int

    def value(self, name: str, deduplicated: bool = False) -> int | None:
        if name == 'pairings' and deduplicated:
            return self.unique_pairings
        return getattr(self, name)


@dataclass(frozen=True)
class CountMismatch:
    split: Split
    field: str
    expected: int
    actual: int | None


@dataclass(frozen=True)
class CountReport:
    """Computed statistics and the verdict against the published constants."""
    stats: dict[Split, SplitStats]
    passed: bool
    convention: str | None
    mismatches: list[CountMismatch] = field(default_factory=list)
    deduplicated_mismatches: list[CountMismatch] = field(default_factory=list)

    def as_lines(self) -> list[str]:
        lines = []
        for split, stats in self.stats.items():
            categories = 'unknown' if stats.categories is None else stats.categories
            lines.extend([
                f"{split}.categories={categories}",
                f"{split}.unique_objects={stats.unique_objects}",
                f"{split}.pairings={stats.pairings}",
                f"{split}.unique_pairings={stats.unique_pairings}",
            ])
        lines.append(f"status={'pass' if self.passed else 'fail'}")
        if self.convention:
            lines.append(f"convention={self.convention}")
        for mismatch in self.mismatches:
            actual = 'unknown' if mismatch.actual is None else mismatch.actual
            lines.append(
                f"diff.{mismatch.split}.{mismatch.field}=expected:{mismatch.expected},actual:{actual}"
            )
        return lines


def split_stats(
    instances: Iterable[ReferenceInstance],
    object_categories: Mapping[str, str] | None = None,
) -> dict[Split, SplitStats]:
    by_split = {split: [] for split in Split}
    for instance in instances:
        by_split[instance.split].append(instance)

    stats = {}
    for split, members in by_split.items():
        objects = {i.target_id for i in members} | {i.distractor_id for i in members}
        unique_pairings = {
            (frozenset((i.target_id, i.distractor_id)), i.description_id) for i in members
        }
        categories = None
        if object_categories is not None:
            categories = len({object_categories[o] for o in objects if o in object_categories})
        stats[split] = SplitStats(
            split=split,
            categories=categories,
            unique_objects=len(objects),
            pairings=len(members),
            unique_pairings=len(unique_pairings),
        )
    return stats


def _mismatches(stats: dict[Split, SplitStats], deduplicated: bool) -> list[CountMismatch]:
    mismatches = []
    for split, expected in EXPECTED_COUNTS.items():
        for name, expected_value in zip(COUNT_FIELDS, expected):
            actual = stats[split].value(name, deduplicated)
            if actual != expected_value:
                mismatches.append(CountMismatch(split, name, expected_value, actual))
    return mismatches


def validate_counts(
    instances: Iterable[ReferenceInstance],
    object_categories: Mapping[str, str] | None = None,
) -> CountReport:
    """
    Compare split statistics with the published SNARE constants.

    Pairings are counted both per record and deduplicated over unordered
    (object pair, description); the report passes if either convention
    matches all nine numbers. Mismatches are reported, never raised.
    """
    stats = split_stats(instances, object_categories)
    raw = _mismatches(stats, deduplicated=False)
    deduplicated = _mismatches(stats, deduplicated=True)

    convention = None
    if not raw:
        convention = 'per_record'
    elif not deduplicated:
        convention = 'deduplicated'

    return CountReport(
        stats=stats,
        passed=convention is not None,
        convention=convention,
        mismatches=raw if convention is None else [],
        deduplicated_mismatches=deduplicated if convention is None else [],
    )


def load_object_categories(path) -> dict[str, str]:
    """Read an object_id,category CSV."""
    with open(path, newline='', encoding='utf-8') as handle:
        rows = list(csv.reader(handle))
    if rows and rows[0][:2] == ['object_id', 'category']:
        rows = rows[1:]
    return {row[0]: row[1] for row in rows if len(row) >= 2}


# =============================================================================
# Split assignments
# =============================================================================

SplitAssignment = dict[str, Split]


def reassign_split(pretrain: Mapping[str, Split], snare: Mapping[str, Split]) -> SplitAssignment:
    """
    Move pretraining objects into the split SNARE puts them in.

    Objects only in the pretraining set keep their split; objects only in
    SNARE are not added.
    """
    return {object_id: snare.get(object_id, split) for object_id, split in pretrain.items()}


def snare_split_assignment(instances: Iterable[ReferenceInstance]) -> SplitAssignment:
    """Split membership of every object mentioned by the instances (first mention wins)."""
    assignment = {}
    conflicts = 0
    for instance in instances:
        for object_id in (instance.target_id, instance.distractor_id):
            current = assignment.setdefault(object_id, instance.split)
            if current != instance.split:
                conflicts += 1
    if conflicts:
        logger.warning(f"{conflicts} object mention(s) disagree with the object's first split")
    return assignment


def read_split_csv(path) -> SplitAssignment:
    """Read an object_id,split CSV; each id may appear only once."""
    assignment = {}
    with open(path, newline='', encoding='utf-8') as handle:
        for line_number, row in enumerate(csv.reader(handle), start=1):
            if not row or row[:2] == ['object_id', 'split']:
                continue
            if len(row) < 2:
                raise ValueError(f"{path}:{line_number}: expected object_id,split")
            object_id, split = row[0], parse_split(row[1])
            if object_id in assignment:
                raise ValueError(f"{path}:{line_number}: duplicate object id {object_id!r}")
            assignment[object_id] = split
    return assignment


def write_split_csv(assignment: Mapping[str, Split], path) -> None:
    with open(path, 'w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(['object_id', 'split'])
        for object_id, split in assignment.items():
            writer.writerow([object_id, Split(split).value])


# =============================================================================
# Batching
# =============================================================================

def batch_iterator(
    instances: Iterable[ReferenceInstance],
    split: Split,
    seed: int,
    batch_size: int,
    epoch: int = 0,
) -> list[list[ReferenceInstance]]:
    """
    Shuffle one split's instances and cut them into batches.

    The order depends only on (seed, epoch); every instance appears exactly
    once and the final batch may be short.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be at least 1, got {batch_size}")
    split = parse_split(split)
    members = [instance for instance in instances if instance.split == split]
    if not members:
        raise EmptySplitError(f"split {split} has no instances")

    order = np.random.default_rng([seed, epoch]).permutation(len(members))
    return [
        [members[i] for i in order[start:start + batch_size]]
        for start in range(0, len(members), batch_size)
    ]
