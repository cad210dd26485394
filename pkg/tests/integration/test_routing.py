"""Integration tests for routing logic."""

import unittest
import tempfile

from fuselab.graph import initial_state
from fuselab.routing import route_after_preparation, route_after_train, route_after_validation
from fuselab.config import ExperimentConfig


def make_state(tmpdir, **changes):
    state = initial_state(ExperimentConfig(output_root=tmpdir, data_dir=tmpdir))
    state.update(changes)
    return state


class TestRouteAfterPreparation(unittest.TestCase):
    """Test route_after_preparation routing function."""

    def test_proceeds_to_training(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            self.assertEqual(route_after_preparation(make_state(tmpdir)), "train_epoch")

    def test_error_skips_to_completion(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            state = make_state(tmpdir, errors=["Preparation failed: DatasetError: empty"])
            self.assertEqual(route_after_preparation(state), "completion")


class TestRouteAfterTrain(unittest.TestCase):
    """Test route_after_train routing function."""

    def test_proceeds_to_validation(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            self.assertEqual(route_after_train(make_state(tmpdir, epoch=1)), "validation")

    def test_failed_epoch_stops(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            state = make_state(tmpdir, epoch=1, errors=["Epoch 1 failed: NonFiniteLossError"])
            self.assertEqual(route_after_train(state), "completion")


class TestRouteAfterValidation(unittest.TestCase):
    """Test route_after_validation routing function."""

    def test_loops_back_while_improving(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            state = make_state(tmpdir, epoch=1, best_score=0.5, best_epoch=1)
            self.assertEqual(route_after_validation(state), "train_epoch")

    def test_epoch_budget_spent(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            state = make_state(tmpdir, epoch=30, stop_reason='max_epochs')
            self.assertEqual(route_after_validation(state), "completion")

    def test_patience_exhausted(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            state = make_state(tmpdir, epoch=12, epochs_without_improvement=10,
                               stop_reason='early_stopping')
            self.assertEqual(route_after_validation(state), "completion")

    def test_error_wins_over_looping(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            state = make_state(tmpdir, epoch=1, errors=["Validation at epoch 1 failed"])
            self.assertEqual(route_after_validation(state), "completion")


if __name__ == '__main__':
    unittest.main()
