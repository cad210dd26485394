"""Integration tests for the training step, evaluation, checkpoints and ablation."""

import csv
import math
import os
import tempfile
import unittest

import numpy as np

from fuselab.checkpoint import load_checkpoint, save_checkpoint
from fuselab.data import INTERACTION_CORPUS, Dataset, read_dataset, write_dataset
from fuselab.errors import ConfigError, DatasetError, NonFiniteLossError
from fuselab.harness import (
    ABLATION_FIELDS, ablate, batch_for, evaluate, evaluate_dataset, model_from_checkpoint,
    prepare_session, run_epoch, sweep_configs, to_checkpoint, train, train_step,
)
from fuselab.state import FusionKind, Task

from tests.fixtures import tiny_config


def first_batch(session):
    samples = session.datasets['train'].samples[:16]
    return batch_for(session.config, samples, session.source_vocab, session.target_vocab)


def validation_metrics(network, session):
    return evaluate_dataset(network, session.config, session.datasets['valid'],
                            session.source_vocab, session.target_vocab)


class TestTrainStep(unittest.TestCase):
    """Loss bookkeeping and parameter isolation of one optimizer step."""

    def test_concat_fusion_has_no_fusion_loss(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            session = prepare_session(tiny_config(tmpdir, fusion=FusionKind.CONCAT))
            rows = run_epoch(session, 1)
            self.assertTrue(rows)
            self.assertTrue(all(row['j_fusion'] == 0.0 for row in rows))

    def test_loss_decomposition(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            for fusion in (FusionKind.AUTO, FusionKind.GAN):
                config = tiny_config(tmpdir, fusion=fusion, lambda_fusion=0.3, lambda_task=1.7,
                                     run_name=fusion.value)
                session = prepare_session(config)
                for row in run_epoch(session, 1):
                    expected = 0.3 * row['j_fusion'] + 1.7 * row['j_task']
                    self.assertAlmostEqual(row['j_total'], expected, delta=1e-12)
                    self.assertEqual(row['lambda_fusion'], 0.3)

    def test_zero_fusion_weight_is_task_loss(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            session = prepare_session(tiny_config(tmpdir, lambda_fusion=0.0))
            row = train_step(session, first_batch(session), 1)
            self.assertEqual(row['j_total'], row['j_task'])

    def test_generator_step_leaves_discriminators_alone(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            session = prepare_session(tiny_config(tmpdir, fusion=FusionKind.GAN))
            network = session.network
            d_ids = {id(p) for p in network.discriminator_parameters()}
            self.assertTrue(d_ids)
            self.assertFalse(d_ids & {id(p) for p in session.optimizer.params})

            # With the discriminator step disabled only the generator step can move D
            session.disc_optimizer.state.lr = 0.0
            before = network.state_dict()
            train_step(session, first_batch(session), 1)
            after = network.state_dict()
            for name in before:
                if '.D.' in name:
                    np.testing.assert_array_equal(before[name], after[name], err_msg=name)
            moved = [n for n in before if '.G.' in n and not np.array_equal(before[n], after[n])]
            self.assertTrue(moved)

    def test_discriminator_step_updates_discriminators(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            session = prepare_session(tiny_config(tmpdir, fusion=FusionKind.GAN))
            before = session.network.state_dict()
            train_step(session, first_batch(session), 1)
            after = session.network.state_dict()
            moved = [n for n in before if '.D.' in n and not np.array_equal(before[n], after[n])]
            self.assertTrue(moved)
            self.assertEqual(session.disc_optimizer.state.step, 1)
            self.assertEqual(session.disc_optimizer.state.lr, session.config.lr / 2.0)

    def test_non_finite_loss_is_reported(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            session = prepare_session(tiny_config(tmpdir))
            session.network.head.out.bias.value.data[:] = np.nan
            with self.assertRaises(NonFiniteLossError) as ctx:
                train_step(session, first_batch(session), 1)
            self.assertEqual(ctx.exception.term, 'j_task')
            self.assertTrue(math.isnan(ctx.exception.value))

    def test_batch_norm_generator_needs_two_training_samples(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            config = tiny_config(tmpdir, fusion=FusionKind.GAN, gan_batch_norm=True)
            path = config.split_path('train')
            write_dataset(path, read_dataset(path).subset([0]))
            with self.assertRaises(DatasetError):
                prepare_session(config)


class TestEvaluation(unittest.TestCase):
    """Deterministic evaluation and checkpoint round trips."""

    def test_checkpoint_round_trip_reproduces_metrics(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            session = prepare_session(tiny_config(tmpdir, fusion=FusionKind.GAN))
            run_epoch(session, 1)
            path = os.path.join(tmpdir, 'model.ckpt')
            save_checkpoint(path, to_checkpoint(session))

            loaded = model_from_checkpoint(load_checkpoint(path))
            self.assertEqual(loaded.config, session.config)
            self.assertEqual(loaded.source_vocab.itos, session.source_vocab.itos)
            self.assertEqual(validation_metrics(loaded.network, session),
                             validation_metrics(session.network, session))
            self.assertEqual(loaded.optimizers['model'].step, session.optimizer.state.step)

    def test_evaluation_is_repeatable(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            session = prepare_session(tiny_config(tmpdir, fusion=FusionKind.GAN, dropout=0.5))
            first = validation_metrics(session.network, session)
            second = validation_metrics(session.network, session)
            self.assertEqual(first, second)
            self.assertTrue(session.network.training)

    def test_silhouette_only_for_gan_fusion(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            for fusion in FusionKind:
                session = prepare_session(tiny_config(tmpdir, fusion=fusion, run_name=fusion.value))
                metrics = validation_metrics(session.network, session)
                self.assertEqual('silhouette' in metrics, fusion is FusionKind.GAN, fusion.value)
                if fusion is FusionKind.GAN:
                    self.assertGreaterEqual(metrics['silhouette'], -1.0)
                    self.assertLessEqual(metrics['silhouette'], 1.0)

    def test_interaction_accuracy_reported(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            session = prepare_session(tiny_config(tmpdir))
            metrics = validation_metrics(session.network, session)
            for name in ('accuracy', 'precision', 'recall', 'f1', 'interaction_accuracy'):
                self.assertIn(name, metrics)

    def test_interaction_accuracy_needs_interaction_corpus(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            session = prepare_session(tiny_config(tmpdir))
            valid = session.datasets['valid']
            foreign = Dataset(valid.task, valid.samples)
            metrics = evaluate_dataset(session.network, session.config, foreign,
                                       session.source_vocab, session.target_vocab)
            self.assertEqual(session.config.n_classes, 4)
            self.assertIn('accuracy', metrics)
            self.assertNotIn('interaction_accuracy', metrics)

    def test_corpus_tag_survives_dataset_files(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            config = tiny_config(tmpdir)
            self.assertEqual(read_dataset(config.split_path('test')).corpus, INTERACTION_CORPUS)

    def test_wrong_task_dataset(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            session = prepare_session(tiny_config(tmpdir))
            other = prepare_session(tiny_config(tmpdir, task=Task.TRANSLATION, run_name='mt'))
            with self.assertRaises(DatasetError):
                evaluate_dataset(session.network, session.config, other.datasets['valid'],
                                 session.source_vocab, None)


class TestTrainedArtifacts(unittest.TestCase):
    """evaluate() and ablate() against a trained translation run."""

    @classmethod
    def setUpClass(cls):
        cls.tmpdir = tempfile.TemporaryDirectory()
        config = tiny_config(cls.tmpdir.name, task=Task.TRANSLATION, fusion=FusionKind.GAN, epochs=1)
        cls.config = config
        cls.result = train(config)
        cls.test_path = config.split_path('test')

    @classmethod
    def tearDownClass(cls):
        cls.tmpdir.cleanup()

    def test_zero_word_drop_matches_plain_evaluation(self):
        plain = evaluate(self.result.best_checkpoint, self.test_path)
        dropped = evaluate(self.result.best_checkpoint, self.test_path, word_drop_p=0.0)
        self.assertEqual(plain, dropped)
        self.assertEqual(plain['bleu4'], self.result.summary['test']['bleu4'])
        for n in range(1, 5):
            self.assertGreaterEqual(plain[f'bleu{n}'], 0.0)
            self.assertLessEqual(plain[f'bleu{n}'], 100.0)

    def test_word_drop_is_seeded(self):
        first = evaluate(self.result.best_checkpoint, self.test_path, word_drop_p=0.5)
        second = evaluate(self.result.best_checkpoint, self.test_path, word_drop_p=0.5)
        self.assertEqual(first, second)

    def test_word_drop_range(self):
        with self.assertRaises(ConfigError):
            evaluate(self.result.best_checkpoint, self.test_path, word_drop_p=1.5)

    def test_ablation_curve(self):
        out = os.path.join(self.tmpdir.name, 'curves', 'ablation.csv')
        rows = ablate(self.result.best_checkpoint, self.test_path, [0.0, 0.5, 1.0], out)

        self.assertEqual([row['p'] for row in rows], [0.0, 0.5, 1.0])
        plain = evaluate(self.result.best_checkpoint, self.test_path)
        self.assertEqual(rows[0]['bleu4'], plain['bleu4'])

        with open(out, newline='') as f:
            reader = csv.DictReader(f)
            self.assertEqual(tuple(reader.fieldnames), ABLATION_FIELDS)
            self.assertEqual(len(list(reader)), 3)

    def test_ablation_rejects_bad_probability(self):
        with self.assertRaises(ConfigError):
            ablate(self.result.best_checkpoint, self.test_path, [0.0, 1.2])

    def test_ablation_needs_translation_checkpoint(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            result = train(tiny_config(tmpdir, epochs=1))
            with self.assertRaises(ConfigError):
                ablate(result.best_checkpoint, self.test_path)


class TestSweepConfigs(unittest.TestCase):

    def test_grid_has_distinct_run_directories(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            base = tiny_config(tmpdir, run_name='grid')
            configs = sweep_configs(base, [0.0, 1.0], [0.5, 1.0], [FusionKind.AUTO, FusionKind.GAN])
            self.assertEqual(len(configs), 8)
            self.assertEqual(len({c.run_name for c in configs}), 8)
            self.assertTrue(all(c.run_name.startswith('grid') for c in configs))


if __name__ == '__main__':
    unittest.main()
