"""
Pairwise reference game training.

Each instance contributes one target and one distractor score. The default
loss is binary cross-entropy against smoothed labels (1 - eps for the
target, eps for the distractor); a paired-softmax cross-entropy is available
for comparison. Parameters are updated with AdamW (decoupled weight decay)
under a linear warmup, and the checkpoint with the best validation "all"
accuracy is kept.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
import torch

from .checkpoints import load_checkpoint, save_checkpoint
from .evaluation import CategoryAccuracy, evaluate_model
from .features import FeatureArchive, read_archive
from .keyvalue import dataclass_lines
from .network import (
    ModelConfig,
    NonFiniteError,
    Objective,
    ShapeError,
    VoxelGrounder,
    assign_parameters,
    gradients,
    init_params,
    named_tensors,
)
from .snare import EmptySplitError, ReferenceInstance, Split, batch_iterator, load_annotations

logger = logging.getLogger(__name__)


SCORE_CLIP = 1e-7
CHECKPOINT_FILENAME = 'best.vlgc'
RECORD_FILENAME = 'run_record.txt'


class TrainConfigError(ValueError):
    """Invalid optimizer or schedule settings."""


class LossKind(StrEnum):
    BCE = 'bce'
    PAIRED_SOFTMAX = 'paired_softmax'


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer, schedule and loss settings; every value lands in the RunRecord."""
    base_lr: float = 1e-3
    warmup_steps: int = 10_000
    epochs: int = 75
    batch_size: int = 32
    smoothing: float = 0.2
    weight_decay: float = 1e-2
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    loss: LossKind = LossKind.BCE
    grad_clip: float = 0.0  # global-norm clipping; 0 disables

    def __post_init__(self):
        try:
            object.__setattr__(self, 'loss', LossKind(self.loss))
        except ValueError:
            allowed = ', '.join(kind.value for kind in LossKind)
            raise TrainConfigError(f"unknown loss {self.loss!r}; allowed: {allowed}") from None
        _check_smoothing(self.smoothing)
        if self.warmup_steps < 0:
            raise TrainConfigError(f"warmup_steps must be >= 0, got {self.warmup_steps}")
        if self.epochs < 1:
            raise TrainConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise TrainConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.base_lr <= 0:
            raise TrainConfigError(f"base_lr must be positive, got {self.base_lr}")
        if not all(0.0 <= beta < 1.0 for beta in self.betas):
            raise TrainConfigError(f"betas must lie in [0, 1), got {self.betas}")
        if self.eps <= 0 or self.weight_decay < 0 or self.grad_clip < 0:
            raise TrainConfigError("eps must be positive; weight_decay and grad_clip non-negative")
        if self.seed < 0:
            raise TrainConfigError(f"seed must be non-negative, got {self.seed}")


def _check_smoothing(smoothing: float) -> None:
    if not 0.0 <= smoothing < 0.5:
        raise TrainConfigError(f"smoothing must lie in [0, 0.5), got {smoothing}")


# =============================================================================
# Losses
# =============================================================================

def _binary_cross_entropy(score, label: float):
    return -(label * torch.log(score) + (1.0 - label) * torch.log1p(-score))


def _clipped(score):
    if not torch.is_tensor(score):
        score = torch.as_tensor(score, dtype=torch.float64)
    return score.clamp(SCORE_CLIP, 1.0 - SCORE_CLIP)


def smoothed_bce(s_target, s_distractor, smoothing: float):
    """
    BCE(s_target, 1 - eps) + BCE(s_distractor, eps), averaged over the batch.

    Scores are clipped to [1e-7, 1 - 1e-7] before taking logs.
    """
    _check_smoothing(smoothing)
    per_instance = (
        _binary_cross_entropy(_clipped(s_target), 1.0 - smoothing)
        + _binary_cross_entropy(_clipped(s_distractor), smoothing)
    )
    return per_instance.mean()


_LOGIT_CLIP = math.log((1.0 - SCORE_CLIP) / SCORE_CLIP)


def paired_softmax_loss(logit_target, logit_distractor, smoothing: float):
    """Cross-entropy of softmax over the two candidates against (1 - eps, eps)."""
    _check_smoothing(smoothing)
    logits = torch.stack([logit_target, logit_distractor], dim=-1).clamp(-_LOGIT_CLIP, _LOGIT_CLIP)
    log_probs = torch.log_softmax(logits, dim=-1)
    per_instance = -((1.0 - smoothing) * log_probs[..., 0] + smoothing * log_probs[..., 1])
    return per_instance.mean()


def make_objective(cfg: TrainConfig) -> Objective:
    """Loss over (target logits, distractor logits) for the configured loss kind."""
    if cfg.loss == LossKind.PAIRED_SOFTMAX:
        return lambda target, distractor: paired_softmax_loss(target, distractor, cfg.smoothing)
    return lambda target, distractor: smoothed_bce(
        torch.sigmoid(target), torch.sigmoid(distractor), cfg.smoothing
    )


# =============================================================================
# Optimizer
# =============================================================================

def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0 to base_lr over warmup_steps, then constant."""
    if step < 0:
        raise TrainConfigError(f"step must be >= 0, got {step}")
    if cfg.warmup_steps == 0:
        return cfg.base_lr
    return cfg.base_lr * min(1.0, step / cfg.warmup_steps)


@dataclass
class AdamState:
    """First and second moment estimates per parameter name."""
    m: dict[str, torch.Tensor]
    v: dict[str, torch.Tensor]
    step: int = 0


def init_adam_state(params: Mapping[str, torch.Tensor]) -> AdamState:
    return AdamState(
        m={name: torch.zeros_like(tensor) for name, tensor in params.items()},
        v={name: torch.zeros_like(tensor) for name, tensor in params.items()},
    )


def adamw_step(
    params: Mapping[str, torch.Tensor],
    grads: Mapping[str, torch.Tensor],
    state: AdamState,
    cfg: TrainConfig,
    step: int,
) -> tuple[dict[str, torch.Tensor], AdamState]:
    """
    One AdamW update; returns new tensors and leaves the inputs untouched.

    theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
    """
    if step < 1:
        raise TrainConfigError(f"optimizer steps start at 1, got {step}")
    if params.keys() != grads.keys():
        raise ShapeError("parameters and gradients name different tensors")
    for name, grad in grads.items():
        if grad.shape != params[name].shape:
            raise ShapeError(f"{name}: gradient shape {tuple(grad.shape)} != {tuple(params[name].shape)}")
        if not bool(torch.isfinite(grad).all()):
            raise NonFiniteError(f"non-finite gradient in {name} at step {step}")

    lr = lr_at(step, cfg)
    beta1, beta2 = cfg.betas
    correction1 = 1.0 - beta1 ** step
    correction2 = 1.0 - beta2 ** step

    new_params, new_m, new_v = {}, {}, {}
    for name, theta in params.items():
        grad = grads[name]
        m = beta1 * state.m[name] + (1.0 - beta1) * grad
        v = beta2 * state.v[name] + (1.0 - beta2) * (grad * grad)
        m_hat = m / correction1
        v_hat = v / correction2
        new_params[name] = theta - lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * theta)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(m=new_m, v=new_v, step=step)


def clip_gradients(grads: dict[str, torch.Tensor], max_norm: float) -> dict[str, torch.Tensor]:
    """Scale all gradients so their global L2 norm is at most max_norm (0 disables)."""
    if max_norm <= 0:
        return grads
    total = math.sqrt(sum(float((grad * grad).sum()) for grad in grads.values()))
    if total <= max_norm:
        return grads
    scale = max_norm / total
    return {name: grad * scale for name, grad in grads.items()}


# =============================================================================
# Run records
# =============================================================================

@dataclass(frozen=True)
class EpochResult:
    epoch: int
    step: int
    train_loss: float
    valid: CategoryAccuracy

    def as_line(self) -> str:
        return (
            f"epoch={self.epoch} step={self.step} train_loss={self.train_loss!r} "
            f"visual_correct={self.valid.visual_correct} visual_count={self.valid.visual_count} "
            f"blind_correct={self.valid.blind_correct} blind_count={self.valid.blind_count} "
            f"valid_all={self.valid.all!r}"
        )

    @classmethod
    def from_line(cls, line: str) -> 'EpochResult':
        values = dict(token.partition('=')[::2] for token in line.split())
        return cls(
            epoch=int(values['epoch']),
            step=int(values['step']),
            train_loss=float(values['train_loss']),
            valid=CategoryAccuracy(
                visual_correct=int(values['visual_correct']),
                visual_count=int(values['visual_count']),
                blind_correct=int(values['blind_correct']),
                blind_count=int(values['blind_count']),
            ),
        )


@dataclass
class RunRecord:
    """Per-epoch history of one training run plus its best checkpoint."""
    seed: int
    variant: str
    best_epoch: int
    steps: int
    checkpoint_path: str = ''
    epochs: list[EpochResult] = field(default_factory=list)
    config: dict[str, str] = field(default_factory=dict)

    @property
    def best(self) -> EpochResult:
        return self.epochs[self.best_epoch - 1]

    @property
    def train_losses(self) -> list[float]:
        return [epoch.train_loss for epoch in self.epochs]

    def to_text(self) -> str:
        lines = [
            f"seed={self.seed}",
            f"variant={self.variant}",
            f"best_epoch={self.best_epoch}",
            f"best_valid_all={self.best.valid.all!r}",
            f"steps={self.steps}",
            f"checkpoint={self.checkpoint_path}",
        ]
        lines += [f"{key}={value}" for key, value in self.config.items()]
        lines += [epoch.as_line() for epoch in self.epochs]
        return '\n'.join(lines) + '\n'

    @classmethod
    def from_text(cls, text: str) -> 'RunRecord':
        header, epochs, config = {}, [], {}
        for line in text.splitlines():
            if not line.strip():
                continue
            if line.startswith('epoch='):
                epochs.append(EpochResult.from_line(line))
                continue
            key, _, value = line.partition('=')
            if '.' in key:
                config[key] = value
            else:
                header[key] = value
        return cls(
            seed=int(header['seed']),
            variant=header['variant'],
            best_epoch=int(header['best_epoch']),
            steps=int(header['steps']),
            checkpoint_path=header.get('checkpoint', ''),
            epochs=epochs,
            config=config,
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding='utf-8')

    @classmethod
    def load(cls, path) -> 'RunRecord':
        return cls.from_text(Path(path).read_text(encoding='utf-8'))


# =============================================================================
# Training loop
# =============================================================================

def _split(instances, split: Split) -> list[ReferenceInstance]:
    members = [instance for instance in instances if instance.split == split]
    if not members:
        raise EmptySplitError(f"split {split} has no instances")
    return members


def _moments(state: AdamState) -> dict[str, torch.Tensor]:
    moments = {f"adam.m.{name}": tensor for name, tensor in state.m.items()}
    moments.update({f"adam.v.{name}": tensor for name, tensor in state.v.items()})
    return moments


def train(
    train_cfg: TrainConfig,
    model_cfg: ModelConfig,
    instances: list[ReferenceInstance],
    archive: FeatureArchive,
    *,
    out_dir=None,
    metadata: dict[str, str] | None = None,
    dtype: torch.dtype = torch.float32,
    on_epoch: Callable[[EpochResult], None] | None = None,
) -> tuple[RunRecord, VoxelGrounder]:
    """
    Train from scratch and keep the best validation checkpoint.

    Returns the RunRecord and the network as it stands after the final
    epoch. With out_dir set, the best checkpoint and the RunRecord are
    written there.
    """
    train_instances = _split(instances, Split.TRAIN)
    valid_instances = _split(instances, Split.VALID)

    params = init_params(model_cfg, train_cfg.seed, dtype)
    objective = make_objective(train_cfg)
    state = init_adam_state(named_tensors(params))

    config_snapshot = dict(
        line.split('=', 1)
        for line in dataclass_lines('model', model_cfg) + dataclass_lines('train', train_cfg)
    )
    config_snapshot.update(metadata or {})
    checkpoint_path = Path(out_dir) / CHECKPOINT_FILENAME if out_dir else None
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)

    logger.info(
        "Starting training run",
        extra={
            'variant': str(model_cfg.variant),
            'seed': train_cfg.seed,
            'train_instances': len(train_instances),
            'valid_instances': len(valid_instances),
        },
    )

    step = 0
    history: list[EpochResult] = []
    best: EpochResult | None = None
    for epoch in range(1, train_cfg.epochs + 1):
        losses = []
        for batch in batch_iterator(train_instances, Split.TRAIN, train_cfg.seed, train_cfg.batch_size, epoch):
            step += 1
            result = gradients(params, batch, archive, objective)
            grads = clip_gradients(result.grads, train_cfg.grad_clip)
            updated, state = adamw_step(named_tensors(params), grads, state, train_cfg, step)
            for name, tensor in updated.items():
                if not bool(torch.isfinite(tensor).all()):
                    raise NonFiniteError(f"parameter {name} became non-finite at step {step}")
            assign_parameters(params, updated)
            losses.append(result.loss)

        valid_accuracy, _ = evaluate_model(params, valid_instances, archive)
        outcome = EpochResult(epoch=epoch, step=step, train_loss=float(np.mean(losses)), valid=valid_accuracy)
        history.append(outcome)

        if best is None or valid_accuracy.all > best.valid.all:
            best = outcome
            if checkpoint_path:
                checkpoint_metadata = {
                    'train.seed': str(train_cfg.seed),
                    'epoch': str(epoch),
                    **(metadata or {}),
                }
                save_checkpoint(checkpoint_path, params, step, checkpoint_metadata, _moments(state))

        logger.info(
            f"Epoch {epoch}/{train_cfg.epochs}: loss={outcome.train_loss:.6f} valid_all={valid_accuracy.all:.2f}",
            extra={'epoch': epoch, 'step': step, 'lr': lr_at(step, train_cfg)},
        )
        if on_epoch:
            on_epoch(outcome)

    record = RunRecord(
        seed=train_cfg.seed,
        variant=str(model_cfg.variant),
        best_epoch=best.epoch,
        steps=step,
        checkpoint_path=str(checkpoint_path) if checkpoint_path else '',
        epochs=history,
        config=config_snapshot,
    )
    if out_dir:
        record.save(Path(out_dir) / RECORD_FILENAME)
    return record, params


@dataclass(frozen=True)
class TrainingJob:
    """Everything a worker process needs to run one (variant, seed) training run."""
    model_cfg: ModelConfig
    train_cfg: TrainConfig
    archive_path: str
    annotations_path: str
    out_dir: str
    eval_split: Split = Split.VALID

    @property
    def key(self) -> tuple[str, int]:
        return (str(self.model_cfg.variant), self.train_cfg.seed)


@dataclass(frozen=True)
class JobResult:
    key: tuple[str, int]
    record: RunRecord
    accuracy: CategoryAccuracy


def run_training_job(job: TrainingJob) -> JobResult:
    """
    Train one run and score its best checkpoint on the job's evaluation split.

    Only plain files are touched, so this is safe to call in a worker process.
    """
    archive = read_archive(job.archive_path)
    instances = [instance for instance in load_annotations(job.annotations_path) if instance.labeled]
    metadata = {
        'data.archive': job.archive_path,
        'data.annotations': job.annotations_path,
    }
    record, _ = train(job.train_cfg, job.model_cfg, instances, archive, out_dir=job.out_dir, metadata=metadata)

    best = load_checkpoint(record.checkpoint_path)
    accuracy, _ = evaluate_model(best.params, _split(instances, job.eval_split), archive)
    return JobResult(key=job.key, record=record, accuracy=accuracy)
