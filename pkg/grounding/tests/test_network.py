"""
Tests for the grounding network.

Test organization:
- ModelConfigTests / InitParamsTests: configuration and initialization
- VisiolinguisticTests: view pooling and the sentence MLP
- TransformerTests: attention, masking and the voxel-language branch
- CandidateTests: batching archive records and scoring instances
- GradientTests: autograd against central finite differences
"""

import numpy as np
import torch
from django.test import SimpleTestCase
from scipy.special import erf

from grounding import network
from grounding.features import FeatureArchive, ObjectFeatures, RecordNotFoundError
from grounding.network import ModelConfigError, NonFiniteError, ShapeError, Variant
from grounding.snare import ReferenceInstance, Split
from grounding.training import make_objective
from grounding.voxels import FACTOR_COUNT, TOKEN_WIDTH

from .helpers import random_factor_set, tiny_dataset, tiny_model_config, tiny_train_config

F64 = torch.float64


def model(variant='full', seed=0, dtype=F64, **overrides):
    return network.init_params(tiny_model_config(variant, **overrides), seed, dtype)


def as_numpy(tensor):
    return tensor.detach().numpy()


def reference_linear(x, layer):
    return x @ as_numpy(layer.weight).T + as_numpy(layer.bias)


def reference_layer_norm(x, norm):
    centered = x - x.mean(axis=-1, keepdims=True)
    variance = (centered ** 2).mean(axis=-1, keepdims=True)
    return centered / np.sqrt(variance + norm.eps) * as_numpy(norm.weight) + as_numpy(norm.bias)


def reference_gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def reference_encode(tokens, encoder):
    """Straight-line numpy version of the pre-norm encoder for one (L, d) sequence."""
    x = tokens
    length, d_model = x.shape
    for layer in encoder.layers:
        attention = layer.attention
        heads, d_head = attention.n_heads, attention.d_head
        h = reference_layer_norm(x, layer.attention_norm)
        q, k, v = (
            reference_linear(h, projection).reshape(length, heads, d_head).transpose(1, 0, 2)
            for projection in (attention.query, attention.key, attention.value)
        )
        scores = q @ k.transpose(0, 2, 1) / np.sqrt(d_head)
        weights = np.exp(scores - scores.max(axis=-1, keepdims=True))
        weights /= weights.sum(axis=-1, keepdims=True)
        context = (weights @ v).transpose(1, 0, 2).reshape(length, d_model)
        x = x + reference_linear(context, attention.output)
        hidden = reference_gelu(reference_linear(reference_layer_norm(x, layer.ff_norm), layer.ff_in))
        x = x + reference_linear(hidden, layer.ff_out)
    return reference_layer_norm(x, encoder.final_norm)


def random_inputs(seed, words=3, batch=None):
    generator = torch.Generator().manual_seed(seed)
    lead = () if batch is None else (batch,)
    return (
        torch.randn(*lead, words, 8, generator=generator, dtype=F64),
        torch.randn(*lead, FACTOR_COUNT, TOKEN_WIDTH, generator=generator, dtype=F64),
    )


# =============================================================================
# Configuration
# =============================================================================

class ModelConfigTests(SimpleTestCase):

    def test_unknown_variant_lists_allowed(self):
        with self.assertRaises(ModelConfigError) as cm:
            tiny_model_config('clip_only')
        for variant in Variant:
            self.assertIn(variant.value, str(cm.exception))

    def test_heads_must_divide_width(self):
        with self.assertRaises(ModelConfigError):
            tiny_model_config(d_model=10, n_heads=3)

    def test_widths_must_be_positive(self):
        with self.assertRaises(ModelConfigError):
            tiny_model_config(mlp_hidden=0)

    def test_unknown_pooling(self):
        with self.assertRaises(ModelConfigError):
            tiny_model_config(view_pooling='median')

    def test_score_input_width_per_variant(self):
        self.assertEqual(tiny_model_config('full').score_input_width, 16)
        self.assertEqual(tiny_model_config('visiolinguistic_only').score_input_width, 8)
        self.assertEqual(tiny_model_config('voxel_only').score_input_width, 8)
        self.assertEqual(tiny_model_config('mlp_fusion').score_input_width, 8 + TOKEN_WIDTH)


class InitParamsTests(SimpleTestCase):
    """Tests for seeded initialization."""

    def test_same_seed_same_weights(self):
        first, second = network.named_tensors(model(seed=3)), network.named_tensors(model(seed=3))
        self.assertEqual(first.keys(), second.keys())
        for name in first:
            self.assertTrue(torch.equal(first[name], second[name]), name)

    def test_different_seed_different_weights(self):
        first, second = model(seed=3), model(seed=4)
        self.assertFalse(torch.equal(first.vl_hidden.weight, second.vl_hidden.weight))

    def test_initialization_scheme(self):
        params = model()
        self.assertTrue(torch.equal(params.encoder.final_norm.weight, torch.ones(8, dtype=F64)))
        self.assertFalse(params.score_hidden.bias.any())
        bound = 1.0 / np.sqrt(params.vl_hidden.in_features)
        self.assertLessEqual(float(params.vl_hidden.weight.abs().max()), bound)
        self.assertLess(float(params.cls_token.abs().max()), 0.2)

    def test_variants_only_build_used_branches(self):
        self.assertFalse(hasattr(model('visiolinguistic_only'), 'encoder'))
        self.assertFalse(hasattr(model('mlp_fusion'), 'encoder'))
        self.assertFalse(hasattr(model('voxel_only'), 'vl_hidden'))
        self.assertTrue(hasattr(model('full'), 'encoder'))

    def test_factor_position_table_is_optional(self):
        self.assertNotIn('factor_position_table', network.named_tensors(model()))
        self.assertIn('factor_position_table', network.named_tensors(model(factor_positions=True)))

    def test_assign_parameters_checks_shapes(self):
        params = model()
        tensors = dict(network.named_tensors(params))
        tensors['cls_token'] = torch.zeros(3, dtype=F64)
        with self.assertRaises(ShapeError):
            network.assign_parameters(params, tensors)

    def test_uniform_weight_spread(self):
        """fan_in 512: empirical std within 20% of 1 / (sqrt(3) * sqrt(512))."""
        config = tiny_model_config('visiolinguistic_only', d_v=256, d_t=256, mlp_hidden=256)
        weight = network.init_params(config, 0, F64).vl_hidden.weight
        self.assertGreaterEqual(weight.numel(), 100_000)
        expected = 1.0 / (np.sqrt(3.0) * np.sqrt(512))
        self.assertLess(abs(float(weight.std()) - expected), 0.2 * expected)

    def test_rejects_non_config(self):
        with self.assertRaises(ModelConfigError):
            network.init_params({'d_v': 8}, 0)


# =============================================================================
# Visiolinguistic branch
# =============================================================================

class VisiolinguisticTests(SimpleTestCase):

    def setUp(self):
        generator = torch.Generator().manual_seed(1)
        self.views = torch.randn(3, 8, generator=generator, dtype=F64)
        self.sentence = torch.randn(8, generator=generator, dtype=F64)

    def test_output_width(self):
        self.assertEqual(network.visiolinguistic_forward(self.sentence, self.views, model()).shape, (8,))

    def test_max_pooling_equals_single_pooled_view(self):
        params = model(view_pooling='max')
        pooled = self.views.amax(dim=0, keepdim=True)
        torch.testing.assert_close(
            network.visiolinguistic_forward(self.sentence, self.views, params),
            network.visiolinguistic_forward(self.sentence, pooled, params),
        )

    def test_mean_pooling_equals_single_pooled_view(self):
        params = model(view_pooling='mean')
        pooled = self.views.mean(dim=0, keepdim=True)
        torch.testing.assert_close(
            network.visiolinguistic_forward(self.sentence, self.views, params),
            network.visiolinguistic_forward(self.sentence, pooled, params),
        )

    def test_view_order_does_not_matter(self):
        params = model()
        torch.testing.assert_close(
            network.visiolinguistic_forward(self.sentence, self.views, params),
            network.visiolinguistic_forward(self.sentence, self.views.flip(0), params),
        )

    def test_batched_matches_unbatched(self):
        params = model()
        batched = network.visiolinguistic_forward(
            torch.stack([self.sentence, -self.sentence]), torch.stack([self.views, self.views]), params,
        )
        torch.testing.assert_close(batched[1], network.visiolinguistic_forward(-self.sentence, self.views, params))

    def test_shape_errors(self):
        params = model()
        with self.assertRaises(ShapeError):
            network.visiolinguistic_forward(self.sentence, torch.zeros(3, 7, dtype=F64), params)
        with self.assertRaises(ShapeError):
            network.visiolinguistic_forward(torch.zeros(5, dtype=F64), self.views, params)
        with self.assertRaises(ShapeError):
            network.visiolinguistic_forward(self.sentence, torch.zeros(0, 8, dtype=F64), params)

    def test_duplicate_views_change_nothing(self):
        for pooling in ('max', 'mean'):
            params = model(view_pooling=pooling)
            with self.subTest(pooling=pooling):
                torch.testing.assert_close(
                    network.visiolinguistic_forward(self.sentence, torch.cat([self.views, self.views]), params),
                    network.visiolinguistic_forward(self.sentence, self.views, params),
                    rtol=0, atol=1e-12,
                )
        params = model(view_pooling='max')
        torch.testing.assert_close(
            network.visiolinguistic_forward(self.sentence, torch.cat([self.views, self.views[:1]]), params),
            network.visiolinguistic_forward(self.sentence, self.views, params),
            rtol=0, atol=0,
        )

    def test_voxel_only_has_no_branch(self):
        with self.assertRaises(ModelConfigError):
            network.visiolinguistic_forward(self.sentence, self.views, model('voxel_only'))


# =============================================================================
# Transformer and voxel-language branch
# =============================================================================

class TransformerTests(SimpleTestCase):
    """Tests for the encoder and the voxel-language branch."""

    def test_matches_straight_line_reference(self):
        """Seeded 3-token input, two layers."""
        params = model(n_layers=2, seed=7)
        tokens = torch.randn(3, 8, generator=torch.Generator().manual_seed(12), dtype=F64)
        ours = as_numpy(network.transformer_encode(tokens, params))
        reference = reference_encode(as_numpy(tokens), params.encoder)
        self.assertLessEqual(float(np.abs(ours - reference).max()), 1e-10)

    def test_attention_rows_are_distributions(self):
        params = model()
        tokens = torch.randn(2, 5, 8, generator=torch.Generator().manual_seed(2), dtype=F64)
        mask = torch.tensor([[False, False, False, True, True], [False] * 5])
        contextual, attention = network.transformer_encode(tokens, params, mask, return_attention=True)
        self.assertEqual(contextual.shape, (2, 5, 8))
        self.assertEqual(len(attention), 1)
        weights = attention[0]
        self.assertEqual(weights.shape, (2, 2, 5, 5))
        torch.testing.assert_close(weights.sum(dim=-1), torch.ones(2, 2, 5, dtype=F64))
        self.assertFalse(weights[0, :, :, 3:].any())

    def test_unbatched_tokens(self):
        tokens = torch.randn(4, 8, generator=torch.Generator().manual_seed(3), dtype=F64)
        self.assertEqual(network.transformer_encode(tokens, model()).shape, (4, 8))

    def test_empty_sequence_rejected(self):
        with self.assertRaises(ShapeError):
            network.transformer_encode(torch.zeros(1, 0, 8, dtype=F64), model())

    def test_output_width(self):
        words, factors = random_inputs(4)
        self.assertEqual(network.voxel_language_forward(words, factors, model()).shape, (8,))

    def test_factor_order_is_irrelevant_without_positions(self):
        params = model()
        words, factors = random_inputs(5)
        permuted = factors[torch.randperm(FACTOR_COUNT, generator=torch.Generator().manual_seed(0))]
        difference = (
            network.voxel_language_forward(words, factors, params)
            - network.voxel_language_forward(words, permuted, params)
        )
        self.assertLess(float(difference.abs().max()), 1e-10)

    def test_factor_positions_make_order_matter(self):
        params = model(factor_positions=True)
        words, factors = random_inputs(5)
        difference = (
            network.voxel_language_forward(words, factors, params)
            - network.voxel_language_forward(words, factors.flip(0), params)
        )
        self.assertGreater(float(difference.abs().max()), 1e-8)

    def test_word_order_matters(self):
        params = model()
        words, factors = random_inputs(6)
        difference = (
            network.voxel_language_forward(words, factors, params)
            - network.voxel_language_forward(words.flip(0), factors, params)
        )
        self.assertGreater(float(difference.abs().max()), 1e-8)

    def test_padding_is_invisible(self):
        """Two real words padded to five give the unpadded result."""
        params = model()
        words, factors = random_inputs(7, words=2)
        padded = torch.cat([words, torch.randn(3, 8, dtype=F64)])[None]
        mask = torch.tensor([[True, True, False, False, False]])
        torch.testing.assert_close(
            network.voxel_language_forward(padded, factors[None], params, mask)[0],
            network.voxel_language_forward(words, factors, params),
        )

    def test_long_descriptions_are_truncated(self):
        params = model(max_words=2)
        words, factors = random_inputs(8, words=3)
        with self.assertLogs('grounding.network', level='WARNING') as logs:
            truncated = network.voxel_language_forward(words, factors, params)
        self.assertIn('Truncating 3 words', logs.output[0])
        torch.testing.assert_close(truncated, network.voxel_language_forward(words[:2], factors, params))

    def test_zero_sublayers_leave_only_the_residual(self):
        """One token through zeroed attention and feed-forward comes out as final_norm(x)."""
        params = model(n_layers=2, seed=4)
        with torch.no_grad():
            for layer in params.encoder.layers:
                for linear in (layer.attention.query, layer.attention.key, layer.attention.value,
                               layer.attention.output, layer.ff_in, layer.ff_out):
                    linear.weight.zero_()
                    linear.bias.zero_()
        token = torch.randn(1, 8, generator=torch.Generator().manual_seed(13), dtype=F64)
        ours = as_numpy(network.transformer_encode(token, params))
        expected = reference_layer_norm(as_numpy(token), params.encoder.final_norm)
        self.assertLessEqual(float(np.abs(ours - expected).max()), 1e-12)

    def test_single_word_and_zero_factors_are_finite(self):
        for dtype in (torch.float32, F64):
            params = model(dtype=dtype)
            words = torch.randn(1, 8, generator=torch.Generator().manual_seed(14), dtype=dtype)
            factors = torch.zeros(FACTOR_COUNT, TOKEN_WIDTH, dtype=dtype)
            with self.subTest(dtype=dtype):
                output = network.voxel_language_forward(words, factors, params)
                self.assertEqual(output.shape, (8,))
                self.assertTrue(bool(torch.isfinite(output).all()))

    def test_input_shape_errors(self):
        params = model()
        words, factors = random_inputs(9)
        with self.assertRaises(ShapeError):
            network.voxel_language_forward(words, factors[:11], params)
        with self.assertRaises(ShapeError):
            network.voxel_language_forward(words, factors[:, :95], params)
        with self.assertRaises(ShapeError):
            network.voxel_language_forward(words[:, :7], factors, params)
        with self.assertRaises(ShapeError):
            network.voxel_language_forward(words[:0], factors, params)

    def test_branch_absent_for_visiolinguistic_only(self):
        words, factors = random_inputs(10)
        with self.assertRaises(ModelConfigError):
            network.voxel_language_forward(words, factors, model('visiolinguistic_only'))

    def test_score_is_a_probability(self):
        params = model()
        e = torch.randn(2, 8, generator=torch.Generator().manual_seed(11), dtype=F64)
        s = network.score(e, -e, params)
        self.assertEqual(s.shape, (2,))
        self.assertTrue(bool(((s > 0) & (s < 1)).all()))
        torch.testing.assert_close(s, torch.sigmoid(network.score_logit(e, -e, params)))

    def test_zero_output_layer_scores_one_half(self):
        params = model()
        with torch.no_grad():
            params.score_out.weight.zero_()
        e = torch.randn(3, 8, generator=torch.Generator().manual_seed(13), dtype=F64)
        torch.testing.assert_close(network.score(e, e, params), torch.full((3,), 0.5, dtype=F64))

    def test_score_increases_with_output_bias(self):
        params = model()
        e = torch.randn(8, generator=torch.Generator().manual_seed(14), dtype=F64)
        scores = []
        for bias in (-2.0, -0.5, 0.0, 1.0, 3.0):
            with torch.no_grad():
                params.score_out.bias.fill_(bias)
            scores.append(float(network.score(e, -e, params)))
        self.assertEqual(scores, sorted(scores))
        self.assertEqual(len(set(scores)), len(scores))

    def test_score_matches_straight_line_reference(self):
        params = model(seed=15)
        generator = torch.Generator().manual_seed(16)
        e_vw, e_ow = torch.randn(8, generator=generator, dtype=F64), torch.randn(8, generator=generator, dtype=F64)
        joint = np.concatenate([as_numpy(e_vw), as_numpy(e_ow)])
        hidden = reference_gelu(reference_linear(joint, params.score_hidden))
        logit = reference_linear(hidden, params.score_out)[0]
        expected = 1.0 / (1.0 + np.exp(-logit))
        self.assertLessEqual(abs(float(network.score(e_vw, e_ow, params)) - expected), 1e-10)

    def test_score_width_checked(self):
        with self.assertRaises(ShapeError):
            network.score_logit(torch.zeros(8, dtype=F64), None, model())


# =============================================================================
# Candidates
# =============================================================================

class CandidateTests(SimpleTestCase):
    """Tests for gathering candidates from an archive and scoring instances."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.dataset = tiny_dataset()
        cls.archive = cls.dataset.archive
        cls.instance = cls.dataset.instances[0]

    def test_batch_shapes_and_mask(self):
        visual = next(i for i in self.dataset.instances if i.category == 'visual')
        pairs = [(visual.target_id, visual.description_id), (visual.distractor_id, visual.description_id)]
        batch = network.build_candidate_batch(pairs, self.archive, F64)
        self.assertEqual(len(batch), 2)
        self.assertEqual(batch.views.shape, (2, 3, 8))
        self.assertEqual(batch.factors.shape, (2, FACTOR_COUNT, TOKEN_WIDTH))
        self.assertEqual(batch.words.dtype, F64)
        self.assertTrue(bool(batch.word_mask.all()))

    def test_unknown_ids(self):
        with self.assertRaises(RecordNotFoundError):
            network.build_candidate_batch([('nope', self.instance.description_id)], self.archive)
        with self.assertRaises(ShapeError):
            network.build_candidate_batch([], self.archive)

    def test_every_variant_scores_a_batch(self):
        pairs = [(i.target_id, i.description_id) for i in self.dataset.instances[:5]]
        batch = network.build_candidate_batch(pairs, self.archive, F64)
        for variant in Variant:
            with self.subTest(variant=variant):
                logits = network.candidate_logits(model(variant), batch)
                self.assertEqual(logits.shape, (5,))
                self.assertTrue(bool(torch.isfinite(logits).all()))

    def test_batched_scores_match_single_scores(self):
        params = model()
        pairs = [(i.target_id, i.description_id) for i in self.dataset.instances[:4]]
        logits = network.candidate_logits(params, network.build_candidate_batch(pairs, self.archive, F64))
        for (object_id, description_id), logit in zip(pairs, logits):
            self.assertAlmostEqual(
                network.score_candidate(object_id, description_id, self.archive, params),
                float(torch.sigmoid(logit)),
                places=12,
            )

    def test_forward_instance_picks_higher_score(self):
        params = model()
        result = network.forward_instance(self.instance, self.archive, params)
        expected = 0 if result.s_target >= result.s_distractor else 1
        self.assertEqual(result.predicted_index, expected)
        self.assertFalse(result.tie)

    def test_identical_candidates_tie_to_first(self):
        original = self.archive.get_object(self.instance.target_id)
        twin = ObjectFeatures('twin', original.view_embeddings, original.factors)
        archive = FeatureArchive.from_records(
            list(self.archive.objects.values()) + [twin], self.archive.descriptions.values(),
        )
        instance = ReferenceInstance('twin', original.object_id, self.instance.description_id,
                                     self.instance.category, Split.TRAIN)
        result = network.forward_instance(instance, archive, model())
        self.assertTrue(result.tie)
        self.assertEqual(result.s_target, result.s_distractor)
        self.assertEqual(result.predicted_index, 0)

    def test_swapping_candidates_swaps_scores(self):
        params = model()
        swapped = ReferenceInstance(self.instance.distractor_id, self.instance.target_id,
                                    self.instance.description_id, self.instance.category, Split.TRAIN)
        result = network.forward_instance(self.instance, self.archive, params)
        mirrored = network.forward_instance(swapped, self.archive, params)
        self.assertEqual((mirrored.s_target, mirrored.s_distractor), (result.s_distractor, result.s_target))
        if not result.tie:
            self.assertEqual(mirrored.predicted_index, 1 - result.predicted_index)

    def test_visiolinguistic_only_ignores_factors(self):
        """Replacing an object's factors leaves the score bit-identical without the voxel branch."""
        original = self.archive.get_object(self.instance.target_id)
        perturbed = ObjectFeatures(original.object_id, original.view_embeddings, random_factor_set(99))
        objects = [perturbed if record.object_id == original.object_id else record
                   for record in self.archive.objects.values()]
        archive = FeatureArchive.from_records(objects, self.archive.descriptions.values())
        args = (original.object_id, self.instance.description_id)

        params = model('visiolinguistic_only')
        self.assertEqual(
            network.score_candidate(*args, archive, params),
            network.score_candidate(*args, self.archive, params),
        )
        params = model('full')
        self.assertNotEqual(
            network.score_candidate(*args, archive, params),
            network.score_candidate(*args, self.archive, params),
        )

    def test_mismatched_config_rejected(self):
        with self.assertRaises(ModelConfigError):
            network.forward_instance(self.instance, self.archive, model(), tiny_model_config('voxel_only'))


# =============================================================================
# Gradients
# =============================================================================

class GradientTests(SimpleTestCase):
    """Reverse-mode gradients against central finite differences in float64."""

    STEP = 1e-4
    TOLERANCE = 1e-4
    EXHAUSTIVE_SIZE = 64
    SAMPLE_SIZE = 48

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        dataset = tiny_dataset()
        cls.archive = dataset.archive
        cls.batch = [i for i in dataset.instances if i.split == Split.TRAIN][:2]
        cls.objective = make_objective(tiny_train_config())

    def loss(self, params):
        with torch.no_grad():
            return float(network.batch_objective(params, self.batch, self.archive, self.objective))

    def numeric_gradient(self, params, parameter, index):
        flat = parameter.data.view(-1)
        original = float(flat[index])
        flat[index] = original + self.STEP
        plus = self.loss(params)
        flat[index] = original - self.STEP
        minus = self.loss(params)
        flat[index] = original
        return (plus - minus) / (2 * self.STEP)

    def checked_indices(self, size, generator):
        """Every entry of small tensors; both ends plus a seeded sample of large ones."""
        if size <= self.EXHAUSTIVE_SIZE:
            return list(range(size))
        sample = generator.choice(size, self.SAMPLE_SIZE, replace=False)
        return sorted({0, size - 1, *(int(i) for i in sample)})

    def check_variant(self, variant):
        params = model(variant, seed=5)
        result = network.gradients(params, self.batch, self.archive, self.objective)
        self.assertAlmostEqual(result.loss, self.loss(params), places=12)

        generator = np.random.default_rng(0)
        for name, parameter in params.named_parameters():
            indices = self.checked_indices(parameter.numel(), generator)
            analytic = np.array([float(result.grads[name].view(-1)[i]) for i in indices])
            numeric = np.array([self.numeric_gradient(params, parameter, i) for i in indices])
            scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-6)
            error = np.abs(analytic - numeric).max() / scale
            self.assertLessEqual(error, self.TOLERANCE, f"{variant} {name}")

    def test_full(self):
        self.check_variant('full')

    def test_visiolinguistic_only(self):
        self.check_variant('visiolinguistic_only')

    def test_mlp_fusion(self):
        self.check_variant('mlp_fusion')

    def test_voxel_only(self):
        self.check_variant('voxel_only')

    def test_every_parameter_gets_a_gradient(self):
        params = model()
        result = network.gradients(params, self.batch, self.archive, self.objective)
        self.assertEqual(set(result.grads), set(network.named_tensors(params)))
        for name, grad in result.grads.items():
            self.assertEqual(grad.shape, network.named_tensors(params)[name].shape)

    def test_gradients_leave_parameters_untouched(self):
        params = model()
        before = {name: tensor.clone() for name, tensor in network.named_tensors(params).items()}
        network.gradients(params, self.batch, self.archive, self.objective)
        for name, tensor in network.named_tensors(params).items():
            self.assertTrue(torch.equal(before[name], tensor))

    def test_non_finite_loss_raises(self):
        with self.assertRaises(NonFiniteError):
            network.gradients(model(), self.batch, self.archive, lambda t, d: (t * float('nan')).sum())

    def test_empty_batch_rejected(self):
        with self.assertRaises(ShapeError):
            network.gradients(model(), [], self.archive, self.objective)
