"""
Run configuration for the management commands.

Settings merge in order: dataclass defaults < VLG_SEED (train.seed only) <
config file < command-line flags. Config files are flat key=value text with
model.*, train.* and data.* keys; anything else is rejected.
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

from .features import ArchiveManifest, SynthConfig, SynthConfigError
from .keyvalue import KeyValueError, dataclass_from_values, dataclass_lines, parse_lines
from .network import ModelConfig, ModelConfigError
from .training import TrainConfig, TrainConfigError

logger = logging.getLogger(__name__)


SECTIONS = ('model', 'train', 'data')


class ConfigError(ValueError):
    """Unknown keys, unparsable values or inconsistent settings."""


@dataclass(frozen=True)
class DataConfig:
    """Dataset locations and synthetic generator settings."""
    archive: str = ''
    annotations: str = ''
    eval_split: str = 'valid'
    valid_fraction: float = 0.1
    test_fraction: float = 0.1
    n_views: int = 8
    d_v: int = 512
    d_t: int = 512
    n_colors: int = 6
    n_shapes: int = 6
    max_parts: int = 6
    view_noise: float = 0.1
    factor_noise: float = 0.05
    word_noise: float = 0.05

    def synth_config(self) -> SynthConfig:
        return SynthConfig(
            n_views=self.n_views,
            d_v=self.d_v,
            d_t=self.d_t,
            n_colors=self.n_colors,
            n_shapes=self.n_shapes,
            max_parts=self.max_parts,
            view_noise=self.view_noise,
            factor_noise=self.factor_noise,
            word_noise=self.word_noise,
        )


@dataclass(frozen=True)
class CliConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    explicit: frozenset[str] = frozenset()

    def as_lines(self) -> list[str]:
        return (
            dataclass_lines('model', self.model)
            + dataclass_lines('train', self.train)
            + dataclass_lines('data', self.data)
        )

    def is_explicit(self, key: str) -> bool:
        return key in self.explicit


def parse_overrides(pairs: list[str] | None) -> dict[str, str]:
    """Turn repeated --set key=value flags into a mapping."""
    overrides = {}
    for pair in pairs or []:
        key, sep, value = pair.partition('=')
        if not sep or not key.strip():
            raise ConfigError(f"expected key=value, got {pair!r}")
        overrides[key.strip()] = value.strip()
    return overrides


def resolve_config(
    config_path=None,
    overrides: dict[str, str] | None = None,
    default_seed: int | None = None,
) -> CliConfig:
    """Merge defaults, the default seed, the config file and flag overrides."""
    values: dict[str, str] = {}
    if default_seed is not None:
        values['train.seed'] = str(default_seed)

    explicit = set()
    if config_path:
        text = Path(config_path).read_text(encoding='utf-8')
        try:
            file_values = parse_lines(text, str(config_path))
        except KeyValueError as exc:
            raise ConfigError(str(exc)) from None
        values.update(file_values)
        explicit.update(file_values)

    values.update(overrides or {})
    explicit.update(overrides or {})

    for key in values:
        section = key.partition('.')[0]
        if section not in SECTIONS or '.' not in key:
            raise ConfigError(f"unknown key {key!r}; keys start with {', '.join(s + '.' for s in SECTIONS)}")

    try:
        config = CliConfig(
            model=dataclass_from_values(ModelConfig, values, 'model'),
            train=dataclass_from_values(TrainConfig, values, 'train'),
            data=dataclass_from_values(DataConfig, values, 'data'),
            explicit=frozenset(explicit),
        )
        config.data.synth_config()
    except (KeyValueError, ModelConfigError, TrainConfigError, SynthConfigError) as exc:
        raise ConfigError(str(exc)) from None

    logger.info("Resolved configuration", extra={'config': config.as_lines()})
    return config


def write_config(config: CliConfig, path) -> None:
    Path(path).write_text('\n'.join(config.as_lines()) + '\n', encoding='utf-8')


def model_for_archive(config: CliConfig, manifest: ArchiveManifest) -> ModelConfig:
    """
    Take d_v and d_t from the archive unless the config sets them explicitly.

    An explicit width that disagrees with the archive is a ConfigError.
    """
    widths = {}
    for name in ('d_v', 'd_t'):
        archive_width = getattr(manifest, name)
        if getattr(config.model, name) == archive_width:
            continue
        if config.is_explicit(f"model.{name}"):
            raise ConfigError(
                f"model.{name}={getattr(config.model, name)} does not match the archive's {name}={archive_width}"
            )
        widths[name] = archive_width
    return replace(config.model, **widths) if widths else config.model
