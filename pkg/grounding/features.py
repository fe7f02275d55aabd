"""
Precomputed feature store and synthetic feature generator.

The grounder never runs its upstream encoders. Everything it sees arrives as
precomputed embeddings:

- ObjectFeatures: n view embeddings (d_v each) plus the object's FactorSet
- DescriptionFeatures: a sentence embedding plus m word embeddings (d_t each)

Archives use the VLGF binary layout (little-endian throughout):

    header      magic b"VLGF", version u16, n, d_v, d_t, object count,
                description count (u32 each)
    provenance  u16 length + UTF-8
    object      id (u16 length + UTF-8), n*d_v float32 views,
                12*3*32 float32 factors
    description id (u16 length + UTF-8), m u32, m*d_t float32 words,
                d_t float32 sentence, text (u32 length + UTF-8)

Factors are held as float64 in memory and stored as float32, so round-trips
are bit-exact for float32-representable values (the synthetic generator only
produces those).

The synthetic generator manufactures objects whose color lives only in the
view embeddings and whose geometry (shape, part count) lives only in the
factors, with matching visual and blindfolded descriptions.
"""

import contextlib
import csv
import functools
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .snare import Category, ReferenceInstance, Split, write_annotations
from .voxels import FACTOR_COUNT, FACTOR_LENGTH, FactorSet

logger = logging.getLogger(__name__)


ARCHIVE_MAGIC = b'VLGF'
ARCHIVE_VERSION = 1
_HEADER = struct.Struct('<4sHIIIII')
_U16 = struct.Struct('<H')
_U32 = struct.Struct('<I')
_FLOAT32 = np.dtype('<f4')
_FACTOR_VALUES = FACTOR_COUNT * 3 * FACTOR_LENGTH

# Synthetic generator constants
VOCAB_SEED = 1234
COLOR_NAMES = ('red', 'green', 'blue', 'yellow', 'white', 'black', 'orange', 'purple')
SHAPE_NAMES = ('mug', 'chair', 'lamp', 'table', 'bottle', 'sofa', 'bowl', 'shelf')

# Independent random streams per vocabulary table / per noise source
_VOCAB_STREAMS = {'view_color': 0, 'color_word': 1, 'shape_word': 2, 'part_word': 3}
_SHAPE_TEMPLATE_STREAM = 10
_VIEW_NOISE_STREAM = 1
_FACTOR_NOISE_STREAM = 2
_WORD_NOISE_STREAM = 3
_ATTRIBUTE_STREAM = 100
_SPLIT_STREAM = 101
_PAIR_STREAM = 102
_OBJECT_SEED_STREAM = 103
_DESCRIPTION_SEED_STREAM = 104

ARCHIVE_FILENAME = 'features.vlgf'
ANNOTATIONS_FILENAME = 'annotations.jsonl'
ATTRIBUTES_FILENAME = 'attributes.csv'


class ArchiveError(ValueError):
    """Base class for feature archive problems."""


class ArchiveFormatError(ArchiveError):
    """Bad magic bytes, unsupported version or malformed layout."""


class TruncatedArchiveError(ArchiveError):
    """The file ends before the payload its header declares."""


class DimensionMismatchError(ArchiveError):
    """A record's dimensions disagree with the rest of the archive."""

    def __init__(self, record_id: str, message: str):
        self.record_id = record_id
        self.detail = message
        super().__init__(f"record {record_id!r}: {message}")

    def __reduce__(self):
        return (type(self), (self.record_id, self.detail))


class DuplicateIdError(ArchiveError):
    """The same id appears twice among objects or among descriptions."""


class RecordNotFoundError(LookupError):
    """Lookup of an id the archive does not hold."""

    def __init__(self, kind: str, record_id: str):
        self.kind = kind
        self.record_id = record_id
        super().__init__(f"{kind} {record_id!r} not found in archive")

    def __reduce__(self):
        return (type(self), (self.kind, self.record_id))


class SynthAttributeError(ValueError):
    """Synthetic attributes outside the configured vocabulary."""


class SynthConfigError(ValueError):
    """Invalid synthetic generator settings or dataset sizes."""


def _frozen_float32(values, name: str, ndim: int) -> np.ndarray:
    array = np.array(values, dtype=np.float32)
    if array.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} contains non-finite entries")
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class ObjectFeatures:
    """Per-object embeddings: view vectors (n x d_v) and the factor set."""
    object_id: str
    view_embeddings: np.ndarray
    factors: FactorSet

    def __post_init__(self):
        views = _frozen_float32(self.view_embeddings, 'view_embeddings', 2)
        if views.shape[0] < 1 or views.shape[1] < 1:
            raise ValueError(f"object {self.object_id!r} needs at least one non-empty view")
        object.__setattr__(self, 'view_embeddings', views)
        if not isinstance(self.factors, FactorSet):
            object.__setattr__(self, 'factors', FactorSet(self.factors))

    @property
    def n_views(self) -> int:
        return self.view_embeddings.shape[0]

    @property
    def d_v(self) -> int:
        return self.view_embeddings.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ObjectFeatures):
            return NotImplemented
        return (
            self.object_id == other.object_id
            and np.array_equal(self.view_embeddings, other.view_embeddings)
            and self.factors == other.factors
        )


@dataclass(frozen=True, eq=False)
class DescriptionFeatures:
    """Sentence embedding (d_t) plus m word embeddings (m x d_t)."""
    description_id: str
    sentence_embedding: np.ndarray
    word_embeddings: np.ndarray
    text: str = ''

    def __post_init__(self):
        sentence = _frozen_float32(self.sentence_embedding, 'sentence_embedding', 1)
        words = _frozen_float32(self.word_embeddings, 'word_embeddings', 2)
        if words.shape[0] < 1:
            raise ValueError(f"description {self.description_id!r} needs at least one word")
        if words.shape[1] != sentence.shape[0]:
            raise DimensionMismatchError(
                self.description_id,
                f"word width {words.shape[1]} differs from sentence width {sentence.shape[0]}",
            )
        object.__setattr__(self, 'sentence_embedding', sentence)
        object.__setattr__(self, 'word_embeddings', words)

    @property
    def d_t(self) -> int:
        return self.sentence_embedding.shape[0]

    @property
    def word_count(self) -> int:
        return self.word_embeddings.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, DescriptionFeatures):
            return NotImplemented
        return (
            self.description_id == other.description_id
            and self.text == other.text
            and np.array_equal(self.sentence_embedding, other.sentence_embedding)
            and np.array_equal(self.word_embeddings, other.word_embeddings)
        )


@dataclass(frozen=True)
class ArchiveManifest:
    """Declared dimensions and record counts of an archive."""
    n_views: int
    d_v: int
    d_t: int
    object_count: int
    description_count: int
    version: int = ARCHIVE_VERSION
    provenance: str = ''

    def as_lines(self) -> list[str]:
        return [
            f"n={self.n_views}",
            f"d_v={self.d_v}",
            f"d_t={self.d_t}",
            f"objects={self.object_count}",
            f"descriptions={self.description_count}",
            f"version={self.version}",
            f"provenance={self.provenance}",
        ]


@dataclass(frozen=True)
class FeatureArchive:
    """An immutable, validated collection of object and description records."""
    manifest: ArchiveManifest
    objects: dict[str, ObjectFeatures] = field(default_factory=dict)
    descriptions: dict[str, DescriptionFeatures] = field(default_factory=dict)

    @classmethod
    def from_records(
        cls,
        objects: Iterable[ObjectFeatures],
        descriptions: Iterable[DescriptionFeatures],
        provenance: str = '',
    ) -> 'FeatureArchive':
        objects = list(objects)
        descriptions = list(descriptions)
        manifest = build_manifest(objects, descriptions, provenance)
        return cls(
            manifest=manifest,
            objects={record.object_id: record for record in objects},
            descriptions={record.description_id: record for record in descriptions},
        )

    def get_object(self, object_id: str) -> ObjectFeatures:
        try:
            return self.objects[object_id]
        except KeyError:
            raise RecordNotFoundError('object', object_id) from None

    def get_description(self, description_id: str) -> DescriptionFeatures:
        try:
            return self.descriptions[description_id]
        except KeyError:
            raise RecordNotFoundError('description', description_id) from None

    def save(self, path) -> None:
        write_archive(
            self.objects.values(), self.descriptions.values(), path,
            provenance=self.manifest.provenance,
        )


def get_object(archive: FeatureArchive, object_id: str) -> ObjectFeatures:
    return archive.get_object(object_id)


def get_description(archive: FeatureArchive, description_id: str) -> DescriptionFeatures:
    return archive.get_description(description_id)


def build_manifest(
    objects: list[ObjectFeatures],
    descriptions: list[DescriptionFeatures],
    provenance: str = '',
) -> ArchiveManifest:
    """
    Derive the manifest from the records and check every record against it.

    The first object fixes n and d_v; the first description fixes d_t.
    """
    n_views = objects[0].n_views if objects else 0
    d_v = objects[0].d_v if objects else 0
    d_t = descriptions[0].d_t if descriptions else 0

    seen = set()
    for record in objects:
        if record.object_id in seen:
            raise DuplicateIdError(f"duplicate object id {record.object_id!r}")
        seen.add(record.object_id)
        if record.d_v != d_v:
            raise DimensionMismatchError(record.object_id, f"d_v={record.d_v}, archive declares d_v={d_v}")
        if record.n_views != n_views:
            raise DimensionMismatchError(record.object_id, f"n={record.n_views}, archive declares n={n_views}")

    seen = set()
    for record in descriptions:
        if record.description_id in seen:
            raise DuplicateIdError(f"duplicate description id {record.description_id!r}")
        seen.add(record.description_id)
        if record.d_t != d_t:
            raise DimensionMismatchError(
                record.description_id, f"d_t={record.d_t}, archive declares d_t={d_t}"
            )

    return ArchiveManifest(
        n_views=n_views,
        d_v=d_v,
        d_t=d_t,
        object_count=len(objects),
        description_count=len(descriptions),
        provenance=provenance,
    )


def _encode_text(text: str, length_struct: struct.Struct) -> bytes:
    encoded = text.encode('utf-8')
    return length_struct.pack(len(encoded)) + encoded


def _atomic_write_bytes(path: Path, chunks: Iterable[bytes]) -> None:
    """Write to a sibling temp file, then rename over the destination."""
    path = Path(path)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, 'wb') as handle:
            for chunk in chunks:
                handle.write(chunk)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def _archive_chunks(manifest, objects, descriptions):
    yield _HEADER.pack(
        ARCHIVE_MAGIC, ARCHIVE_VERSION,
        manifest.n_views, manifest.d_v, manifest.d_t,
        manifest.object_count, manifest.description_count,
    )
    yield _encode_text(manifest.provenance, _U16)
    for record in objects:
        yield _encode_text(record.object_id, _U16)
        yield record.view_embeddings.astype(_FLOAT32).tobytes()
        yield record.factors.array.astype(_FLOAT32).tobytes()
    for record in descriptions:
        yield _encode_text(record.description_id, _U16)
        yield _U32.pack(record.word_count)
        yield record.word_embeddings.astype(_FLOAT32).tobytes()
        yield record.sentence_embedding.astype(_FLOAT32).tobytes()
        yield _encode_text(record.text, _U32)


def write_archive(
    objects: Iterable[ObjectFeatures],
    descriptions: Iterable[DescriptionFeatures],
    path,
    *,
    provenance: str = '',
) -> ArchiveManifest:
    """
    Validate the records and write them as a VLGF archive.

    Inconsistent records refuse the write before any byte reaches disk.
    """
    objects = list(objects)
    descriptions = list(descriptions)
    manifest = build_manifest(objects, descriptions, provenance)
    _atomic_write_bytes(Path(path), _archive_chunks(manifest, objects, descriptions))
    logger.info(
        f"Wrote feature archive {path}",
        extra={'objects': manifest.object_count, 'descriptions': manifest.description_count},
    )
    return manifest


class _Cursor:
    """Sequential reader over the archive bytes."""

    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.offset = 0

    def take(self, size: int, what: str) -> memoryview:
        end = self.offset + size
        if end > len(self.data):
            raise TruncatedArchiveError(
                f"archive truncated while reading {what}: need {size} bytes at offset "
                f"{self.offset}, {len(self.data) - self.offset} left"
            )
        chunk = self.data[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: struct.Struct, what: str):
        return fmt.unpack(self.take(fmt.size, what))

    def text(self, length_struct: struct.Struct, what: str) -> str:
        (length,) = self.unpack(length_struct, f"{what} length")
        try:
            return bytes(self.take(length, what)).decode('utf-8')
        except UnicodeDecodeError as exc:
            raise ArchiveFormatError(f"{what} is not valid UTF-8") from exc

    def floats(self, count: int, what: str) -> np.ndarray:
        chunk = self.take(count * _FLOAT32.itemsize, what)
        return np.frombuffer(chunk, dtype=_FLOAT32).astype(np.float32)

    @property
    def remaining(self) -> int:
        return len(self.data) - self.offset


@contextlib.contextmanager
def _decoding(what: str):
    """Re-raise record validation failures while decoding as ArchiveFormatError."""
    try:
        yield
    except ArchiveError:
        raise
    except ValueError as exc:
        raise ArchiveFormatError(f"{what}: {exc}") from exc


def read_archive(path) -> FeatureArchive:
    """Load a VLGF archive; any defect raises before a partial result escapes."""
    data = Path(path).read_bytes()
    if data[:len(ARCHIVE_MAGIC)] != ARCHIVE_MAGIC:
        raise ArchiveFormatError(f"{path} is not a feature archive (bad magic bytes)")

    if len(data) < _HEADER.size:
        raise ArchiveFormatError(f"{path}: header needs {_HEADER.size} bytes, file has {len(data)}")

    cursor = _Cursor(data)
    _, version, n_views, d_v, d_t, object_count, description_count = cursor.unpack(_HEADER, 'header')
    if version != ARCHIVE_VERSION:
        raise ArchiveFormatError(f"unsupported archive version {version}")
    provenance = cursor.text(_U16, 'provenance')

    objects = []
    for _ in range(object_count):
        object_id = cursor.text(_U16, 'object id')
        views = cursor.floats(n_views * d_v, f"views of {object_id!r}").reshape(n_views, d_v)
        factors = cursor.floats(_FACTOR_VALUES, f"factors of {object_id!r}")
        with _decoding(f"object {object_id!r}"):
            objects.append(ObjectFeatures(
                object_id=object_id,
                view_embeddings=views,
                factors=FactorSet(factors.reshape(FACTOR_COUNT, 3, FACTOR_LENGTH)),
            ))

    descriptions = []
    for _ in range(description_count):
        description_id = cursor.text(_U16, 'description id')
        (word_count,) = cursor.unpack(_U32, f"word count of {description_id!r}")
        if word_count == 0:
            raise ArchiveFormatError(f"description {description_id!r} declares zero words")
        words = cursor.floats(word_count * d_t, f"words of {description_id!r}").reshape(word_count, d_t)
        sentence = cursor.floats(d_t, f"sentence of {description_id!r}")
        text = cursor.text(_U32, f"text of {description_id!r}")
        with _decoding(f"description {description_id!r}"):
            descriptions.append(DescriptionFeatures(description_id, sentence, words, text))

    if cursor.remaining:
        raise ArchiveFormatError(f"{cursor.remaining} trailing bytes after the last record")

    return FeatureArchive.from_records(objects, descriptions, provenance)


# =============================================================================
# Synthetic generator
# =============================================================================

@dataclass(frozen=True)
class SynthAttributes:
    """Ground-truth attributes of a synthetic object."""
    color_id: int
    shape_id: int
    part_count: int


@dataclass(frozen=True)
class SynthConfig:
    """Vocabulary sizes, widths and noise levels of the synthetic generator."""
    n_views: int = 8
    d_v: int = 512
    d_t: int = 512
    n_colors: int = 6
    n_shapes: int = 6
    max_parts: int = 6
    view_noise: float = 0.1
    factor_noise: float = 0.05
    word_noise: float = 0.05

    def __post_init__(self):
        if min(self.n_views, self.d_v, self.d_t) < 1:
            raise SynthConfigError("n_views, d_v and d_t must be at least 1")
        if self.n_colors < 2 or self.n_shapes < 2:
            raise SynthConfigError("need at least 2 colors and 2 shapes")
        if not 1 <= self.max_parts <= FACTOR_COUNT:
            raise SynthConfigError(f"max_parts must lie in [1, {FACTOR_COUNT}]")
        if min(self.view_noise, self.factor_noise, self.word_noise) < 0:
            raise SynthConfigError("noise levels must be non-negative")


DEFAULT_SYNTH_CONFIG = SynthConfig()


def _check_attributes(attrs: SynthAttributes, config: SynthConfig) -> None:
    if not 0 <= attrs.color_id < config.n_colors:
        raise SynthAttributeError(f"color_id {attrs.color_id} outside [0, {config.n_colors})")
    if not 0 <= attrs.shape_id < config.n_shapes:
        raise SynthAttributeError(f"shape_id {attrs.shape_id} outside [0, {config.n_shapes})")
    if not 1 <= attrs.part_count <= config.max_parts:
        raise SynthAttributeError(f"part_count {attrs.part_count} outside [1, {config.max_parts}]")


def _check_seed(seed: int) -> None:
    if seed < 0:
        raise SynthConfigError(f"seeds must be non-negative, got {seed}")


@functools.lru_cache(maxsize=None)
def vocabulary_table(space: str, rows: int, width: int) -> np.ndarray:
    """
    Unit-norm Gaussian rows from the global vocabulary seed.

    Row r does not depend on how many rows are requested.
    """
    rng = np.random.default_rng([VOCAB_SEED, _VOCAB_STREAMS[space]])
    table = rng.standard_normal((rows, width))
    table /= np.sqrt(np.sum(table * table, axis=1, keepdims=True))
    table.setflags(write=False)
    return table


@functools.lru_cache(maxsize=None)
def shape_template(shape_id: int) -> np.ndarray:
    """12 box-profile factors for a shape; each axis profile is an interval indicator."""
    rng = np.random.default_rng([VOCAB_SEED, _SHAPE_TEMPLATE_STREAM, shape_id])
    starts = rng.integers(0, FACTOR_LENGTH - 8, size=(FACTOR_COUNT, 3))
    lengths = rng.integers(4, 12, size=(FACTOR_COUNT, 3))
    index = np.arange(FACTOR_LENGTH)
    inside = (index >= starts[..., None]) & (index < (starts + lengths)[..., None])
    template = inside.astype(np.float64)
    template.setflags(write=False)
    return template


def _label(names: tuple[str, ...], prefix: str, index: int) -> str:
    return names[index] if index < len(names) else f"{prefix}{index}"


def synth_object(
    seed: int,
    attrs: SynthAttributes,
    config: SynthConfig = DEFAULT_SYNTH_CONFIG,
    object_id: str | None = None,
) -> tuple[ObjectFeatures, SynthAttributes]:
    """
    Build one synthetic object.

    Views are the color's embedding plus Gaussian noise; factors are the
    shape's template with only the first part_count factors active, plus noise.
    """
    _check_seed(seed)
    _check_attributes(attrs, config)

    color_row = vocabulary_table('view_color', config.n_colors, config.d_v)[attrs.color_id]
    view_rng = np.random.default_rng([seed, _VIEW_NOISE_STREAM])
    views = color_row[None, :] + config.view_noise * view_rng.standard_normal((config.n_views, config.d_v))

    factors = np.array(shape_template(attrs.shape_id))
    factors[attrs.part_count:] = 0.0
    factor_rng = np.random.default_rng([seed, _FACTOR_NOISE_STREAM])
    factors = factors + config.factor_noise * factor_rng.standard_normal(factors.shape)

    record = ObjectFeatures(
        object_id=object_id or f"synth-{seed}",
        view_embeddings=views.astype(np.float32),
        factors=FactorSet(factors.astype(np.float32).astype(np.float64)),
    )
    return record, attrs


def synth_description(
    seed: int,
    attrs: SynthAttributes,
    style: Category,
    config: SynthConfig = DEFAULT_SYNTH_CONFIG,
    description_id: str | None = None,
) -> DescriptionFeatures:
    """
    Build one synthetic description of an object.

    Visual descriptions name color and shape; blindfolded descriptions name
    shape and part count and never touch the color vocabulary.
    """
    _check_seed(seed)
    _check_attributes(attrs, config)
    style = Category(style)

    color_word = vocabulary_table('color_word', config.n_colors, config.d_t)[attrs.color_id]
    shape_word = vocabulary_table('shape_word', config.n_shapes, config.d_t)[attrs.shape_id]
    part_word = vocabulary_table('part_word', config.max_parts, config.d_t)[attrs.part_count - 1]
    color_name = _label(COLOR_NAMES, 'color', attrs.color_id)
    shape_name = _label(SHAPE_NAMES, 'shape', attrs.shape_id)

    if style == Category.VISUAL:
        rows = np.stack([color_word, shape_word])
        text = f"{color_name} {shape_name}"
    else:
        rows = np.stack([shape_word, part_word])
        text = f"{shape_name} with {attrs.part_count} parts"

    noise_rng = np.random.default_rng([seed, _WORD_NOISE_STREAM])
    words = (rows + config.word_noise * noise_rng.standard_normal(rows.shape)).astype(np.float32)
    sentence = words.astype(np.float64).mean(axis=0).astype(np.float32)

    return DescriptionFeatures(
        description_id=description_id or f"synth-{seed}",
        sentence_embedding=sentence,
        word_embeddings=words,
        text=text,
    )


def _child_seed(seed: int, stream: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, stream, index]).generate_state(1)[0])


@dataclass(frozen=True)
class SyntheticDataset:
    """A generated archive with its reference instances and ground truth."""
    archive: FeatureArchive
    instances: tuple[ReferenceInstance, ...]
    attributes: dict[str, SynthAttributes]
    object_splits: dict[str, Split]

    def count(self, split: Split | None = None, category: Category | None = None) -> int:
        return sum(
            1 for instance in self.instances
            if (split is None or instance.split == split)
            and (category is None or instance.category == category)
        )


def _held_out_objects(n_objects: int, fraction: float) -> int:
    if fraction <= 0 or n_objects < 6:
        return 0
    return max(2, round(n_objects * fraction))


def _differs(a: SynthAttributes, b: SynthAttributes, style: Category) -> bool:
    if style == Category.VISUAL:
        return a.color_id != b.color_id
    return (a.shape_id, a.part_count) != (b.shape_id, b.part_count)


def generate_dataset(
    n_objects: int,
    n_pairs: int,
    seed: int,
    config: SynthConfig = DEFAULT_SYNTH_CONFIG,
    valid_fraction: float = 0.1,
    test_fraction: float = 0.1,
) -> SyntheticDataset:
    """
    Generate a complete synthetic reference game.

    Splits are object-level: pairs only combine objects of the same split.
    Pair i is visual when i is even and blindfolded when odd, and its
    distractor differs from the target in what the description mentions
    (color for visual, shape or part count for blindfolded) whenever the
    split allows it.
    """
    if n_objects < 2:
        raise SynthConfigError(f"need at least 2 objects, got {n_objects}")
    if n_pairs < 1:
        raise SynthConfigError(f"need at least 1 pair, got {n_pairs}")
    if valid_fraction < 0 or test_fraction < 0 or valid_fraction + test_fraction >= 1:
        raise SynthConfigError("valid and test fractions must be non-negative and sum below 1")
    _check_seed(seed)

    attr_rng = np.random.default_rng([seed, _ATTRIBUTE_STREAM])
    colors = attr_rng.integers(0, config.n_colors, size=n_objects)
    shapes = attr_rng.integers(0, config.n_shapes, size=n_objects)
    parts = attr_rng.integers(1, config.max_parts + 1, size=n_objects)

    object_ids = [f"obj-{index:05d}" for index in range(n_objects)]
    attributes = {
        object_id: SynthAttributes(int(colors[i]), int(shapes[i]), int(parts[i]))
        for i, object_id in enumerate(object_ids)
    }
    objects = [
        synth_object(_child_seed(seed, _OBJECT_SEED_STREAM, i), attributes[object_id], config, object_id)[0]
        for i, object_id in enumerate(object_ids)
    ]

    # Object-level split assignment
    order = np.random.default_rng([seed, _SPLIT_STREAM]).permutation(n_objects)
    n_test = _held_out_objects(n_objects, test_fraction)
    n_valid = _held_out_objects(n_objects, valid_fraction)
    if n_objects - n_test - n_valid < 2:
        raise SynthConfigError(f"{n_objects} objects leave fewer than 2 for training")
    split_members = {
        Split.TEST: [object_ids[i] for i in sorted(order[:n_test])],
        Split.VALID: [object_ids[i] for i in sorted(order[n_test:n_test + n_valid])],
        Split.TRAIN: [object_ids[i] for i in sorted(order[n_test + n_valid:])],
    }
    object_splits = {
        object_id: split for split, members in split_members.items() for object_id in members
    }

    # Pairs per split, proportional to the held-out fractions
    pair_counts = {
        Split.VALID: round(n_pairs * valid_fraction) if split_members[Split.VALID] else 0,
        Split.TEST: round(n_pairs * test_fraction) if split_members[Split.TEST] else 0,
    }
    while n_pairs - sum(pair_counts.values()) < 1:
        largest = max(pair_counts, key=pair_counts.get)
        pair_counts[largest] -= 1
    pair_counts = {Split.TRAIN: n_pairs - sum(pair_counts.values()), **pair_counts}

    pair_rng = np.random.default_rng([seed, _PAIR_STREAM])
    instances = []
    descriptions = []
    index = 0
    for split in (Split.TRAIN, Split.VALID, Split.TEST):
        members = split_members[split]
        for _ in range(pair_counts[split]):
            style = Category.VISUAL if index % 2 == 0 else Category.BLIND
            target = members[int(pair_rng.integers(len(members)))]
            others = [m for m in members if m != target]
            contrasting = [m for m in others if _differs(attributes[target], attributes[m], style)]
            pool = contrasting or others
            distractor = pool[int(pair_rng.integers(len(pool)))]

            description_id = f"desc-{index:06d}"
            descriptions.append(synth_description(
                _child_seed(seed, _DESCRIPTION_SEED_STREAM, index),
                attributes[target], style, config, description_id,
            ))
            instances.append(ReferenceInstance(
                target_id=target,
                distractor_id=distractor,
                description_id=description_id,
                category=style,
                split=split,
            ))
            index += 1

    archive = FeatureArchive.from_records(
        objects, descriptions,
        provenance=f"synthetic objects={n_objects} pairs={n_pairs} seed={seed}",
    )
    logger.info(
        "Generated synthetic dataset",
        extra={'objects': n_objects, 'pairs': n_pairs, 'seed': seed},
    )
    return SyntheticDataset(
        archive=archive,
        instances=tuple(instances),
        attributes=attributes,
        object_splits=object_splits,
    )


def write_attributes(dataset: SyntheticDataset, path) -> None:
    with open(path, 'w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(['object_id', 'color_id', 'shape_id', 'part_count', 'split'])
        for object_id, attrs in dataset.attributes.items():
            writer.writerow([
                object_id, attrs.color_id, attrs.shape_id, attrs.part_count,
                dataset.object_splits[object_id].value,
            ])


def write_dataset(dataset: SyntheticDataset, out_dir) -> dict[str, Path]:
    """
    Write archive, annotations and attributes into out_dir.

    Files are staged under temporary names and renamed only once all three
    exist, so a failure leaves no partial output behind.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    targets = {
        'archive': out_dir / ARCHIVE_FILENAME,
        'annotations': out_dir / ANNOTATIONS_FILENAME,
        'attributes': out_dir / ATTRIBUTES_FILENAME,
    }
    staged = {name: path.with_name(f".{path.name}.tmp") for name, path in targets.items()}
    try:
        dataset.archive.save(staged['archive'])
        write_annotations(dataset.instances, staged['annotations'])
        write_attributes(dataset, staged['attributes'])
        for name, path in targets.items():
            os.replace(staged[name], path)
    except BaseException:
        for path in staged.values():
            if path.exists():
                path.unlink()
        raise
    return targets
