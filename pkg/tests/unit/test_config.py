"""Unit tests for experiment configuration."""

import argparse
import os
import tempfile
import unittest
from unittest.mock import patch

from fuselab.config import (
    ExperimentConfig, add_config_arguments, config_from_args, config_from_text,
    default_output_root, parse_config_text, parse_modalities,
)
from fuselab.errors import ConfigError
from fuselab.state import FusionKind, Modality, Task


class TestDefaults(unittest.TestCase):

    def test_resolved_values(self):
        config = ExperimentConfig(d_fuse=16, lr=0.01)
        self.assertEqual(config.resolved_d_r, 16)
        self.assertAlmostEqual(config.resolved_disc_lr, 0.005)
        self.assertEqual(ExperimentConfig(d_r=7, disc_lr=0.2).resolved_d_r, 7)

    def test_output_root_from_environment(self):
        with patch.dict(os.environ, {"FUSELAB_OUTPUT_ROOT": "/tmp/elsewhere"}):
            self.assertEqual(default_output_root(), "/tmp/elsewhere")
            self.assertEqual(ExperimentConfig().output_root, "/tmp/elsewhere")

    def test_split_paths(self):
        config = ExperimentConfig(data_dir="data", test_path="other/test.tsv")
        self.assertEqual(config.split_path("train"), os.path.join("data", "train.tsv"))
        self.assertEqual(config.split_path("test"), "other/test.tsv")
        with self.assertRaises(ConfigError):
            ExperimentConfig().split_path("valid")


class TestValidate(unittest.TestCase):

    def test_defaults_are_valid(self):
        ExperimentConfig().validate()

    def test_negative_lambda(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig(lambda_fusion=-0.1).validate()

    def test_gan_needs_two_modalities(self):
        with self.assertRaises(ConfigError) as ctx:
            ExperimentConfig(fusion=FusionKind.GAN, modalities=(Modality.TEXT,)).validate()
        self.assertIn("two modalities", str(ctx.exception))

    def test_translation_needs_text(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig(task=Task.TRANSLATION, modalities=(Modality.VIDEO, Modality.SPEECH)).validate()

    def test_batch_norm_needs_two_samples_per_batch(self):
        with self.assertRaises(ConfigError) as ctx:
            ExperimentConfig(fusion=FusionKind.GAN, gan_batch_norm=True, batch_size=1).validate()
        self.assertIn("batch_size", str(ctx.exception))
        ExperimentConfig(fusion=FusionKind.GAN, gan_batch_norm=True, batch_size=2).validate()
        ExperimentConfig(fusion=FusionKind.AUTO, gan_batch_norm=True, batch_size=1).validate()

    def test_jargon_rate_range(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig(jargon_rate=-0.1).validate()

    def test_desk_scale_dimensions(self):
        config = ExperimentConfig()
        self.assertEqual(config.latent_dims, {Modality.VIDEO: 32, Modality.SPEECH: 32, Modality.TEXT: 64})

    def test_problems_are_collected(self):
        with self.assertRaises(ConfigError) as ctx:
            ExperimentConfig(epochs=0, dropout=1.0, generator_loss="wasserstein").validate()
        message = str(ctx.exception)
        self.assertIn("epochs", message)
        self.assertIn("dropout", message)
        self.assertIn("wasserstein", message)


class TestParsing(unittest.TestCase):

    def test_modalities(self):
        self.assertEqual(parse_modalities("t,v"), (Modality.VIDEO, Modality.TEXT))
        self.assertEqual(parse_modalities("vst"), (Modality.VIDEO, Modality.SPEECH, Modality.TEXT))
        with self.assertRaises(ConfigError):
            parse_modalities("v,x")
        with self.assertRaises(ConfigError):
            parse_modalities("v,v")

    def test_config_text(self):
        values = parse_config_text(
            "# comment\ntask = translation\nfusion = gan   # inline\nepochs = 3\n"
            "attention = false\nlambda_fusion = 0.5\n"
        )
        self.assertEqual(values, {"task": Task.TRANSLATION, "fusion": FusionKind.GAN, "epochs": 3,
                                  "attention": False, "lambda_fusion": 0.5})

    def test_unknown_key(self):
        with self.assertRaises(ConfigError):
            parse_config_text("learning_rate = 0.1")

    def test_bad_value(self):
        with self.assertRaises(ConfigError):
            parse_config_text("epochs = many")

    def test_missing_equals(self):
        with self.assertRaises(ConfigError):
            parse_config_text("epochs 3")

    def test_text_round_trip(self):
        config = ExperimentConfig(task=Task.TRANSLATION, fusion=FusionKind.GAN, modalities=(Modality.SPEECH, Modality.TEXT),
                                  gan_batch_norm=True, lr=0.0005, output_root="out")
        self.assertEqual(config_from_text(config.to_text()), config)


class TestArguments(unittest.TestCase):

    def _parser(self):
        parser = argparse.ArgumentParser()
        add_config_arguments(parser)
        return parser

    def test_flags_override_file(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = os.path.join(tmpdir, "exp.cfg")
            with open(path, "w") as f:
                f.write("epochs = 7\nfusion = concat\n")
            args = self._parser().parse_args(["--config", path, "--fusion", "gan", "--modalities", "v,t"])
            config = config_from_args(args)
        self.assertEqual(config.epochs, 7)
        self.assertIs(config.fusion, FusionKind.GAN)
        self.assertEqual(config.modalities, (Modality.VIDEO, Modality.TEXT))

    def test_unset_flags_keep_defaults(self):
        config = config_from_args(self._parser().parse_args([]), seed=5)
        self.assertEqual(config.batch_size, ExperimentConfig().batch_size)
        self.assertEqual(config.seed, 5)

    def test_missing_config_file(self):
        with self.assertRaises(ConfigError):
            config_from_args(self._parser().parse_args(["--config", "/nonexistent.cfg"]))

    def test_invalid_combination_from_flags(self):
        args = self._parser().parse_args(["--fusion", "gan", "--modalities", "t"])
        with self.assertRaises(ConfigError):
            config_from_args(args)


if __name__ == '__main__':
    unittest.main()
