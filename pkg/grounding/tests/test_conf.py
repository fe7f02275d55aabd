"""
Tests for run configuration: layering, validation and archive widths.
"""

import environ
from django.test import SimpleTestCase

from grounding import conf, keyvalue
from grounding.conf import CliConfig, ConfigError
from grounding.features import ArchiveManifest
from grounding.keyvalue import KeyValueError
from grounding.network import Variant

from .helpers import TempDirMixin


class ParseOverridesTests(SimpleTestCase):

    def test_pairs(self):
        self.assertEqual(
            conf.parse_overrides(['train.epochs=3', ' model.variant = voxel_only ']),
            {'train.epochs': '3', 'model.variant': 'voxel_only'},
        )

    def test_none(self):
        self.assertEqual(conf.parse_overrides(None), {})

    def test_malformed(self):
        for pair in ('train.epochs', '=3'):
            with self.subTest(pair=pair), self.assertRaises(ConfigError):
                conf.parse_overrides([pair])


class ResolveConfigTests(TempDirMixin, SimpleTestCase):
    """Tests for merging defaults, seed, file and flags."""

    def test_defaults(self):
        config = conf.resolve_config()
        self.assertEqual(config, CliConfig())
        self.assertEqual(config.train.epochs, 75)
        self.assertEqual(config.data.eval_split, 'valid')

    def test_default_seed_is_not_explicit(self):
        config = conf.resolve_config(default_seed=9)
        self.assertEqual(config.train.seed, 9)
        self.assertFalse(config.is_explicit('train.seed'))

    def test_layering_order(self):
        """Flags beat the file, the file beats the default seed."""
        path = self.write_config('train.seed=4\ntrain.epochs=5  # short run\nmodel.variant=mlp_fusion\n')
        config = conf.resolve_config(path, {'train.epochs': '7'}, default_seed=9)
        self.assertEqual(config.train.seed, 4)
        self.assertEqual(config.train.epochs, 7)
        self.assertIs(config.model.variant, Variant.MLP_FUSION)
        self.assertTrue(config.is_explicit('train.epochs'))
        self.assertTrue(config.is_explicit('model.variant'))

    def test_typed_values(self):
        path = self.write_config(
            'train.betas=0.8,0.99\nmodel.factor_positions=true\ndata.view_noise=0.25\ntrain.loss=paired_softmax\n'
        )
        config = conf.resolve_config(path)
        self.assertEqual(config.train.betas, (0.8, 0.99))
        self.assertTrue(config.model.factor_positions)
        self.assertEqual(config.data.synth_config().view_noise, 0.25)

    def test_unknown_section(self):
        with self.assertRaises(ConfigError):
            conf.resolve_config(overrides={'optim.lr': '1'})

    def test_unknown_key(self):
        with self.assertRaises(ConfigError):
            conf.resolve_config(overrides={'train.learning_rate': '1'})

    def test_bad_value(self):
        with self.assertRaises(ConfigError):
            conf.resolve_config(overrides={'train.epochs': 'many'})

    def test_unknown_variant_lists_allowed(self):
        with self.assertRaises(ConfigError) as cm:
            conf.resolve_config(overrides={'model.variant': 'vgg16'})
        self.assertIn('visiolinguistic_only', str(cm.exception))

    def test_invalid_training_value(self):
        with self.assertRaises(ConfigError):
            conf.resolve_config(overrides={'train.smoothing': '0.7'})

    def test_invalid_synthetic_value(self):
        with self.assertRaises(ConfigError):
            conf.resolve_config(overrides={'data.n_colors': '1'})

    def test_malformed_file_line(self):
        path = self.write_config('train.epochs 3\n')
        with self.assertRaises(ConfigError):
            conf.resolve_config(path)

    def test_missing_file(self):
        with self.assertRaises(OSError):
            conf.resolve_config(self.tmp / 'missing.conf')

    def test_written_config_resolves_to_itself(self):
        config = conf.resolve_config(overrides={'train.epochs': '3', 'model.n_heads': '4', 'data.archive': 'a.vlgf'})
        path = self.tmp / 'config.txt'
        conf.write_config(config, path)
        again = conf.resolve_config(path)
        self.assertEqual((again.model, again.train, again.data), (config.model, config.train, config.data))


class ModelForArchiveTests(SimpleTestCase):

    manifest = ArchiveManifest(n_views=3, d_v=8, d_t=16, object_count=4, description_count=4)

    def test_widths_follow_archive(self):
        model = conf.model_for_archive(conf.resolve_config(), self.manifest)
        self.assertEqual((model.d_v, model.d_t), (8, 16))

    def test_matching_explicit_width(self):
        config = conf.resolve_config(overrides={'model.d_v': '8'})
        self.assertEqual(conf.model_for_archive(config, self.manifest).d_v, 8)

    def test_conflicting_explicit_width(self):
        config = conf.resolve_config(overrides={'model.d_t': '32'})
        with self.assertRaises(ConfigError):
            conf.model_for_archive(config, self.manifest)


class CoerceTests(SimpleTestCase):
    """Typed values go through django-environ's casting."""

    def test_scalars(self):
        self.assertEqual(keyvalue.coerce(int, ' 7 '), 7)
        self.assertEqual(keyvalue.coerce(float, '1e-3'), 1e-3)
        self.assertEqual(keyvalue.coerce(float, '0.25'), 0.25)
        self.assertEqual(keyvalue.coerce(str, 'runs/a'), 'runs/a')

    def test_booleans_follow_environ(self):
        for text in ('true', 'True', 'yes', 'on', '1'):
            with self.subTest(text=text):
                self.assertIs(keyvalue.coerce(bool, text), True)
        for text in ('false', 'off', '0', 'no'):
            with self.subTest(text=text):
                self.assertIs(keyvalue.coerce(bool, text), False)

    def test_matches_environ_parse_value(self):
        for cast, text in ((int, '12'), (float, '0.999'), (bool, 'yes')):
            with self.subTest(cast=cast, text=text):
                self.assertEqual(keyvalue.coerce(cast, text), environ.Env.parse_value(text, cast))

    def test_tuple(self):
        self.assertEqual(keyvalue.coerce(tuple[float, float], '0.8, 0.99'), (0.8, 0.99))

    def test_tuple_length_checked(self):
        with self.assertRaises(KeyValueError):
            keyvalue.coerce(tuple[float, float], '0.8')

    def test_bad_number(self):
        with self.assertRaises(KeyValueError):
            keyvalue.coerce(int, 'many')
        with self.assertRaises(KeyValueError):
            keyvalue.coerce(float, 'fast')

    def test_enum_left_to_dataclass(self):
        self.assertEqual(keyvalue.coerce(Variant, 'voxel_only'), 'voxel_only')

    def test_unsupported_type(self):
        with self.assertRaises(KeyValueError):
            keyvalue.coerce(list, 'a,b')
