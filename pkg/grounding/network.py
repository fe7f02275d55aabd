"""
The two-branch grounding network.

A description w is scored against an object v as s(v, w) in (0, 1):

- visiolinguistic branch:  e_vw = MLP([pool(views); sentence])
- voxel-language branch:   e_ow = head(CLS output of a transformer over
                           [CLS; projected words; projected factor tokens])
- scoring head:            s = sigmoid(MLP([e_vw; e_ow]))

Variants drop or replace a branch: visiolinguistic_only scores e_vw alone,
voxel_only scores e_ow alone, and mlp_fusion swaps the transformer for the
elementwise max over the 12 raw factor tokens.

Feature inputs are constants; gradients reach parameters only.
"""

import logging
import math
from dataclasses import dataclass
from enum import StrEnum
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .features import FeatureArchive
from .snare import ReferenceInstance
from .voxels import FACTOR_COUNT, TOKEN_WIDTH, factor_tokens

logger = logging.getLogger(__name__)


TIE_TOLERANCE = 1e-12
EMBEDDING_STD = 0.02
LAYER_NORM_EPS = 1e-5

# Parameters initialized as embeddings rather than as linear weights
EMBEDDING_PARAMETERS = frozenset({
    'cls_token', 'word_positions', 'language_type', 'factor_type', 'factor_position_table',
})


class ModelConfigError(ValueError):
    """Invalid network configuration."""


class ShapeError(ValueError):
    """An input tensor does not have the width or length the network expects."""


class NonFiniteError(ArithmeticError):
    """A loss, gradient or parameter became NaN or infinite."""


class Variant(StrEnum):
    FULL = 'full'
    VISIOLINGUISTIC_ONLY = 'visiolinguistic_only'
    MLP_FUSION = 'mlp_fusion'
    VOXEL_ONLY = 'voxel_only'


class Pooling(StrEnum):
    MAX = 'max'
    MEAN = 'mean'


def _coerce_choice(enum_type, value, name: str):
    try:
        return enum_type(value)
    except ValueError:
        allowed = ', '.join(member.value for member in enum_type)
        raise ModelConfigError(f"unknown {name} {value!r}; allowed: {allowed}") from None


@dataclass(frozen=True)
class ModelConfig:
    """Widths, depth and variant of the network."""
    d_v: int = 512
    d_t: int = 512
    d_model: int = 512
    n_heads: int = 8
    n_layers: int = 2
    d_ff: int = 1024
    mlp_hidden: int = 512
    fusion_dim: int = 512
    variant: Variant = Variant.FULL
    view_pooling: Pooling = Pooling.MAX
    max_words: int = 32
    factor_positions: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'variant', _coerce_choice(Variant, self.variant, 'variant'))
        object.__setattr__(self, 'view_pooling', _coerce_choice(Pooling, self.view_pooling, 'view_pooling'))
        for name in ('d_v', 'd_t', 'd_model', 'n_heads', 'n_layers', 'd_ff', 'mlp_hidden',
                     'fusion_dim', 'max_words'):
            if getattr(self, name) < 1:
                raise ModelConfigError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.d_model % self.n_heads:
            raise ModelConfigError(
                f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}"
            )

    @property
    def uses_visiolinguistic(self) -> bool:
        return self.variant != Variant.VOXEL_ONLY

    @property
    def uses_transformer(self) -> bool:
        return self.variant in (Variant.FULL, Variant.VOXEL_ONLY)

    @property
    def score_input_width(self) -> int:
        if self.variant == Variant.FULL:
            return 2 * self.fusion_dim
        if self.variant == Variant.MLP_FUSION:
            return self.fusion_dim + TOKEN_WIDTH
        return self.fusion_dim


class SelfAttention(nn.Module):
    """Multi-head scaled dot-product self-attention that also returns its weights."""

    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.query = nn.Linear(d_model, d_model)
        self.key = nn.Linear(d_model, d_model)
        self.value = nn.Linear(d_model, d_model)
        self.output = nn.Linear(d_model, d_model)

    def _heads(self, x):
        batch, length, _ = x.shape
        return x.view(batch, length, self.n_heads, self.d_head).transpose(1, 2)

    def forward(self, x, padding_mask=None):
        batch, length, d_model = x.shape
        q, k, v = self._heads(self.query(x)), self._heads(self.key(x)), self._heads(self.value(x))

        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        if padding_mask is not None:
            scores = scores.masked_fill(padding_mask[:, None, None, :], float('-inf'))
        weights = scores.softmax(dim=-1)

        context = (weights @ v).transpose(1, 2).reshape(batch, length, d_model)
        return self.output(context), weights


class EncoderLayer(nn.Module):
    """Pre-norm block: x + attn(norm(x)), then h + ff(norm(h)) with a GELU feed-forward."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int):
        super().__init__()
        self.attention_norm = nn.LayerNorm(d_model, eps=LAYER_NORM_EPS)
        self.attention = SelfAttention(d_model, n_heads)
        self.ff_norm = nn.LayerNorm(d_model, eps=LAYER_NORM_EPS)
        self.ff_in = nn.Linear(d_model, d_ff)
        self.ff_out = nn.Linear(d_ff, d_model)

    def forward(self, x, padding_mask=None):
        attended, weights = self.attention(self.attention_norm(x), padding_mask)
        hidden = x + attended
        return hidden + self.ff_out(F.gelu(self.ff_in(self.ff_norm(hidden)))), weights


class TransformerEncoder(nn.Module):
    def __init__(self, d_model: int, n_heads: int, n_layers: int, d_ff: int):
        super().__init__()
        self.d_model = d_model
        self.layers = nn.ModuleList(EncoderLayer(d_model, n_heads, d_ff) for _ in range(n_layers))
        self.final_norm = nn.LayerNorm(d_model, eps=LAYER_NORM_EPS)

    def forward(self, x, padding_mask=None):
        attention = []
        for layer in self.layers:
            x, weights = layer(x, padding_mask)
            attention.append(weights)
        return self.final_norm(x), attention


class VoxelGrounder(nn.Module):
    """
    All learnable weights of the network; only the submodules the variant
    uses are created.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        if config.uses_visiolinguistic:
            self.vl_hidden = nn.Linear(config.d_v + config.d_t, config.mlp_hidden)
            self.vl_out = nn.Linear(config.mlp_hidden, config.fusion_dim)
        if config.uses_transformer:
            self.word_proj = nn.Linear(config.d_t, config.d_model)
            self.factor_proj = nn.Linear(TOKEN_WIDTH, config.d_model)
            self.cls_token = nn.Parameter(torch.zeros(config.d_model))
            self.word_positions = nn.Parameter(torch.zeros(config.max_words, config.d_model))
            self.language_type = nn.Parameter(torch.zeros(config.d_model))
            self.factor_type = nn.Parameter(torch.zeros(config.d_model))
            if config.factor_positions:
                self.factor_position_table = nn.Parameter(torch.zeros(FACTOR_COUNT, config.d_model))
            self.encoder = TransformerEncoder(config.d_model, config.n_heads, config.n_layers, config.d_ff)
            self.ow_head = nn.Linear(config.d_model, config.fusion_dim)
        self.score_hidden = nn.Linear(config.score_input_width, config.mlp_hidden)
        self.score_out = nn.Linear(config.mlp_hidden, 1)

    @property
    def dtype(self) -> torch.dtype:
        return self.score_out.weight.dtype

    def forward(self, batch: 'CandidateBatch'):
        return candidate_logits(self, batch)


def init_params(config: ModelConfig, seed: int, dtype: torch.dtype = torch.float32) -> VoxelGrounder:
    """
    Build a freshly initialized network.

    Linear weights ~ uniform(+-1/sqrt(fan_in)), biases 0, layer norms at
    identity, CLS/position/modality embeddings ~ normal(0, 0.02). Values are
    drawn in float64 from one seeded generator, in parameter order.
    """
    if not isinstance(config, ModelConfig):
        raise ModelConfigError(f"expected a ModelConfig, got {type(config).__name__}")
    model = VoxelGrounder(config).to(dtype)
    generator = torch.Generator().manual_seed(seed)

    with torch.no_grad():
        for name, parameter in model.named_parameters():
            leaf = name.rsplit('.', 1)[-1]
            shape = parameter.shape
            if name in EMBEDDING_PARAMETERS:
                values = torch.randn(shape, generator=generator, dtype=torch.float64) * EMBEDDING_STD
            elif 'norm' in name:
                values = torch.ones(shape) if leaf == 'weight' else torch.zeros(shape)
            elif leaf == 'bias':
                values = torch.zeros(shape)
            else:
                bound = 1.0 / math.sqrt(shape[1])
                values = (torch.rand(shape, generator=generator, dtype=torch.float64) * 2 - 1) * bound
            parameter.copy_(values)
    return model


def named_tensors(params: VoxelGrounder) -> dict[str, torch.Tensor]:
    """Detached view of every parameter by name."""
    return {name: parameter.detach() for name, parameter in params.named_parameters()}


def assign_parameters(params: VoxelGrounder, tensors: dict[str, torch.Tensor]) -> None:
    """Overwrite parameters in place from a name -> tensor mapping."""
    with torch.no_grad():
        for name, parameter in params.named_parameters():
            value = tensors[name]
            if value.shape != parameter.shape:
                raise ShapeError(f"{name}: expected shape {tuple(parameter.shape)}, got {tuple(value.shape)}")
            parameter.copy_(value)


# =============================================================================
# Branches
# =============================================================================

def _check_width(tensor, expected: int, what: str) -> None:
    if tensor.shape[-1] != expected:
        raise ShapeError(f"{what} width {tensor.shape[-1]} does not match expected {expected}")


def visiolinguistic_forward(sentence_emb, view_embeddings, params: VoxelGrounder):
    """e_vw = MLP([pool over views; sentence]). Accepts (n, d_v) or batched (B, n, d_v)."""
    config = params.config
    if not config.uses_visiolinguistic:
        raise ModelConfigError(f"variant {config.variant} has no visiolinguistic branch")
    if view_embeddings.dim() < 2 or view_embeddings.shape[-2] == 0:
        raise ShapeError("at least one view embedding is required")
    _check_width(view_embeddings, config.d_v, 'view embedding')
    _check_width(sentence_emb, config.d_t, 'sentence embedding')

    if config.view_pooling == Pooling.MAX:
        pooled = view_embeddings.amax(dim=-2)
    else:
        pooled = view_embeddings.mean(dim=-2)
    hidden = F.gelu(params.vl_hidden(torch.cat([pooled, sentence_emb], dim=-1)))
    return params.vl_out(hidden)


def transformer_encode(tokens, params, padding_mask=None, return_attention: bool = False):
    """
    Run the pre-norm encoder over (L, d_model) or (B, L, d_model) tokens.

    padding_mask marks positions (B, L) that no query may attend to.
    """
    encoder = params.encoder if isinstance(params, VoxelGrounder) else params
    unbatched = tokens.dim() == 2
    if unbatched:
        tokens = tokens.unsqueeze(0)
    if tokens.shape[1] < 1:
        raise ShapeError("at least one token is required")
    _check_width(tokens, encoder.d_model, 'token')

    contextual, attention = encoder(tokens, padding_mask)
    if unbatched:
        contextual = contextual[0]
        attention = [weights[0] for weights in attention]
    return (contextual, attention) if return_attention else contextual


def voxel_language_forward(word_embeddings, factor_token_tensor, params: VoxelGrounder, word_mask=None):
    """
    e_ow from the CLS output over [CLS; words; factor tokens].

    Words get projection + learned position + language embedding; factor
    tokens get projection + factor modality embedding (positions only when
    configured). word_mask marks real (True) versus padded words.
    """
    config = params.config
    if not config.uses_transformer:
        raise ModelConfigError(f"variant {config.variant} has no voxel-language transformer")

    unbatched = word_embeddings.dim() == 2
    words = word_embeddings.unsqueeze(0) if unbatched else word_embeddings
    factors = factor_token_tensor.unsqueeze(0) if unbatched else factor_token_tensor
    if factors.shape[-2] != FACTOR_COUNT:
        raise ShapeError(f"expected {FACTOR_COUNT} factor tokens, got {factors.shape[-2]}")
    _check_width(factors, TOKEN_WIDTH, 'factor token')
    if words.shape[1] < 1:
        raise ShapeError("at least one word embedding is required")
    _check_width(words, config.d_t, 'word embedding')

    if words.shape[1] > config.max_words:
        logger.warning(
            f"Truncating {words.shape[1]} words to the first {config.max_words}",
            extra={'words': words.shape[1], 'max_words': config.max_words},
        )
        words = words[:, :config.max_words]
        if word_mask is not None:
            word_mask = word_mask[:, :config.max_words]

    batch, length = words.shape[0], words.shape[1]
    language = params.word_proj(words) + params.word_positions[:length] + params.language_type
    geometry = params.factor_proj(factors) + params.factor_type
    if config.factor_positions:
        geometry = geometry + params.factor_position_table
    cls = params.cls_token.view(1, 1, -1).expand(batch, 1, -1)
    sequence = torch.cat([cls, language, geometry], dim=1)

    padding_mask = None
    if word_mask is not None:
        keep = torch.ones(batch, 1, dtype=torch.bool)
        padding_mask = ~torch.cat([keep, word_mask, keep.expand(batch, FACTOR_COUNT)], dim=1)

    contextual = transformer_encode(sequence, params, padding_mask)
    e_ow = params.ow_head(contextual[:, 0])
    return e_ow[0] if unbatched else e_ow


def score_logit(e_vw, e_ow, params: VoxelGrounder):
    """Pre-sigmoid score; either input may be None for single-branch variants."""
    joint = torch.cat([part for part in (e_vw, e_ow) if part is not None], dim=-1)
    _check_width(joint, params.score_hidden.in_features, 'joint embedding')
    return params.score_out(F.gelu(params.score_hidden(joint))).squeeze(-1)


def score(e_vw, e_ow, params: VoxelGrounder):
    """s = sigmoid(MLP([e_vw; e_ow]))."""
    return torch.sigmoid(score_logit(e_vw, e_ow, params))


# =============================================================================
# Candidates
# =============================================================================

@dataclass(frozen=True)
class CandidateBatch:
    """Feature tensors for B (object, description) candidates; words padded to a common length."""
    sentences: torch.Tensor     # (B, d_t)
    views: torch.Tensor         # (B, n, d_v)
    words: torch.Tensor         # (B, m_max, d_t)
    word_mask: torch.Tensor     # (B, m_max) bool, True for real words
    factors: torch.Tensor       # (B, 12, 96)

    def __len__(self) -> int:
        return self.sentences.shape[0]


def build_candidate_batch(
    pairs: list[tuple[str, str]],
    archive: FeatureArchive,
    dtype: torch.dtype = torch.float32,
) -> CandidateBatch:
    """Gather (object_id, description_id) pairs from the archive into tensors."""
    if not pairs:
        raise ShapeError("a candidate batch needs at least one candidate")
    objects = [archive.get_object(object_id) for object_id, _ in pairs]
    descriptions = [archive.get_description(description_id) for _, description_id in pairs]

    longest = max(description.word_count for description in descriptions)
    d_t = descriptions[0].d_t
    words = np.zeros((len(pairs), longest, d_t), dtype=np.float32)
    word_mask = np.zeros((len(pairs), longest), dtype=bool)
    for row, description in enumerate(descriptions):
        words[row, :description.word_count] = description.word_embeddings
        word_mask[row, :description.word_count] = True

    return CandidateBatch(
        sentences=torch.from_numpy(np.stack([d.sentence_embedding for d in descriptions])).to(dtype),
        views=torch.from_numpy(np.stack([o.view_embeddings for o in objects])).to(dtype),
        words=torch.from_numpy(words).to(dtype),
        word_mask=torch.from_numpy(word_mask),
        factors=torch.from_numpy(np.stack([factor_tokens(o.factors) for o in objects])).to(dtype),
    )


def candidate_logits(params: VoxelGrounder, batch: CandidateBatch):
    """Per-candidate pre-sigmoid scores for the configured variant, shape (B,)."""
    config = params.config
    e_vw = None
    if config.uses_visiolinguistic:
        e_vw = visiolinguistic_forward(batch.sentences, batch.views, params)

    second = None
    if config.uses_transformer:
        word_mask = None if bool(batch.word_mask.all()) else batch.word_mask
        second = voxel_language_forward(batch.words, batch.factors, params, word_mask)
    elif config.variant == Variant.MLP_FUSION:
        second = batch.factors.amax(dim=-2)

    return score_logit(e_vw, second, params)


@dataclass(frozen=True)
class ScorePair:
    """Scores of the target (candidate 0) and the distractor (candidate 1)."""
    s_target: float
    s_distractor: float
    predicted_index: int
    tie: bool


def score_candidate(object_id: str, description_id: str, archive: FeatureArchive, params: VoxelGrounder) -> float:
    batch = build_candidate_batch([(object_id, description_id)], archive, params.dtype)
    with torch.no_grad():
        return float(torch.sigmoid(candidate_logits(params, batch))[0])


def forward_instance(
    instance: ReferenceInstance,
    archive: FeatureArchive,
    params: VoxelGrounder,
    config: ModelConfig | None = None,
) -> ScorePair:
    """
    Score both candidates independently and pick the higher one.

    Scores within 1e-12 of each other are a tie, resolved to candidate 0.
    """
    if config is not None and config != params.config:
        raise ModelConfigError("config does not match the parameters' config")
    s_target = score_candidate(instance.target_id, instance.description_id, archive, params)
    s_distractor = score_candidate(instance.distractor_id, instance.description_id, archive, params)

    tie = abs(s_target - s_distractor) <= TIE_TOLERANCE
    predicted_index = 0 if tie or s_target > s_distractor else 1
    return ScorePair(s_target, s_distractor, predicted_index, tie)


# =============================================================================
# Gradients
# =============================================================================

# (target logits, distractor logits) -> scalar loss
Objective = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


@dataclass(frozen=True)
class GradientResult:
    loss: float
    grads: dict[str, torch.Tensor]


def batch_objective(
    params: VoxelGrounder,
    batch: list[ReferenceInstance],
    archive: FeatureArchive,
    objective: Objective,
):
    """Training loss of a batch of instances, as a differentiable tensor."""
    if not batch:
        raise ShapeError("a training batch needs at least one instance")
    pairs = [(i.target_id, i.description_id) for i in batch]
    pairs += [(i.distractor_id, i.description_id) for i in batch]
    logits = candidate_logits(params, build_candidate_batch(pairs, archive, params.dtype))
    return objective(logits[:len(batch)], logits[len(batch):])


def gradients(
    params: VoxelGrounder,
    batch: list[ReferenceInstance],
    archive: FeatureArchive,
    objective: Objective,
) -> GradientResult:
    """Reverse-mode gradient of the batch loss for every named parameter."""
    loss = batch_objective(params, batch, archive, objective)
    if not torch.isfinite(loss):
        raise NonFiniteError(f"non-finite loss {float(loss)}")

    names, tensors = zip(*params.named_parameters())
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    return GradientResult(
        loss=float(loss),
        grads={
            name: torch.zeros_like(tensor) if grad is None else grad
            for name, tensor, grad in zip(names, tensors, grads)
        },
    )
