"""
Shared fixtures for the grounding tests: tiny configurations and datasets
small enough to train in seconds on one CPU core.
"""

import shutil
import tempfile
from pathlib import Path

import numpy as np

from grounding.features import SynthConfig, generate_dataset, write_dataset
from grounding.network import ModelConfig
from grounding.training import TrainConfig
from grounding.voxels import FACTOR_COUNT, FACTOR_LENGTH, FactorSet

TINY_SYNTH = SynthConfig(n_views=3, d_v=8, d_t=8, n_colors=4, n_shapes=4, max_parts=4)

TINY_MODEL = dict(d_v=8, d_t=8, d_model=8, n_heads=2, n_layers=1, d_ff=16, mlp_hidden=8, fusion_dim=8)


def tiny_model_config(variant='full', **overrides) -> ModelConfig:
    return ModelConfig(**{**TINY_MODEL, 'variant': variant, **overrides})


def tiny_train_config(**overrides) -> TrainConfig:
    values = dict(base_lr=1e-3, warmup_steps=5, epochs=2, batch_size=4, seed=0)
    values.update(overrides)
    return TrainConfig(**values)


def tiny_dataset(n_objects=12, n_pairs=24, seed=0, config=TINY_SYNTH, **fractions):
    return generate_dataset(n_objects, n_pairs, seed, config, **fractions)


def random_factor_set(seed: int) -> FactorSet:
    """Uniform [0, 1) factors that survive a float32 round-trip unchanged."""
    rng = np.random.default_rng(seed)
    values = rng.random((FACTOR_COUNT, 3, FACTOR_LENGTH)).astype(np.float32)
    return FactorSet(values.astype(np.float64))


class TempDirMixin:
    """Creates self.tmp (a Path) before each test and removes it afterwards."""

    def setUp(self):
        super().setUp()
        self.tmp = Path(tempfile.mkdtemp(prefix='grounding-test-'))
        self.addCleanup(shutil.rmtree, self.tmp, ignore_errors=True)

    def write_tiny_dataset(self, name='data', **kwargs):
        dataset = tiny_dataset(**kwargs)
        paths = write_dataset(dataset, self.tmp / name)
        return dataset, paths

    def write_config(self, text: str, name='run.conf') -> Path:
        path = self.tmp / name
        path.write_text(text, encoding='utf-8')
        return path


def tiny_config_text(archive, annotations, **extra) -> str:
    """A config file for the tiny model and a couple of quick epochs."""
    lines = [f"model.{key}={value}" for key, value in TINY_MODEL.items()]
    lines += [
        'train.epochs=2',
        'train.batch_size=4',
        'train.warmup_steps=5',
        f"data.archive={archive}",
        f"data.annotations={annotations}",
    ]
    lines += [f"{key}={value}" for key, value in extra.items()]
    return '\n'.join(lines) + '\n'
