"""Unit tests for helper functions."""

import unittest
import tempfile
import os
import json
from fuselab.state import RunPhase, TrainingState
from fuselab.helpers import (
    METRICS_FILE,
    STATUS_FILE,
    SUMMARY_FILE,
    transition_phase,
    metric_rows,
    add_metric_rows,
    add_error,
    write_metrics_csv,
    read_metrics_csv,
    write_summary,
    update_status_file
)


def make_state(run_dir: str = '/tmp/unused', **overrides) -> TrainingState:
    state: TrainingState = {
        'run_id': 'run_123',
        'run_dir': run_dir,
        'config': None,
        'session': None,
        'current_phase': RunPhase.PREPARATION,
        'phase_history': [],
        'epoch': 0,
        'best_score': None,
        'best_epoch': 0,
        'epochs_without_improvement': 0,
        'best_snapshot': None,
        'stop_reason': None,
        'summary': {},
        'records': [],
        'loss_log': [],
        'errors': [],
        'failure': None
    }
    state.update(overrides)
    return state


class TestTransitionPhase(unittest.TestCase):
    """Test transition_phase helper."""

    def test_phase_transition(self):
        result = transition_phase(make_state(), RunPhase.TRAINING)

        self.assertEqual(result['current_phase'], RunPhase.TRAINING)
        self.assertEqual(result['phase_history'], [RunPhase.TRAINING])


class TestMetricRows(unittest.TestCase):
    """Test RunRecord row construction."""

    def test_rows_sorted_by_metric_name(self):
        rows = metric_rows(3, 'valid', {'macro_f1': 0.25, 'accuracy': 0.5})
        self.assertEqual([r['metric'] for r in rows], ['accuracy', 'macro_f1'])
        self.assertTrue(all(r['epoch'] == 3 and r['split'] == 'valid' for r in rows))

    def test_add_metric_rows_returns_update(self):
        update = add_metric_rows(make_state(), 0, 'valid', {'bleu4': 12.5})
        self.assertEqual(list(update), ['records'])
        self.assertEqual(update['records'][0]['value'], 12.5)


class TestAddError(unittest.TestCase):
    """Test add_error helper."""

    def test_error_is_timestamped(self):
        result = add_error(make_state(), "Test error message")

        self.assertEqual(len(result['errors']), 1)
        self.assertIn("Test error message", result['errors'][0])
        self.assertIn(" - ", result['errors'][0])
        self.assertNotIn('failure', result)

    def test_exception_is_kept(self):
        error = ValueError("bad record")
        result = add_error(make_state(), "Preparation failed", error)

        self.assertIs(result['failure'], error)


class TestRunFiles(unittest.TestCase):
    """Test metrics.csv, summary.json and status.json writers."""

    def test_metrics_csv_preserves_values(self):
        rows = metric_rows(1, 'train', {'j_task': 1.0 / 3.0, 'j_fusion': 0.0})
        with tempfile.TemporaryDirectory() as tmpdir:
            path = os.path.join(tmpdir, METRICS_FILE)
            write_metrics_csv(path, rows)
            with open(path) as f:
                self.assertEqual(f.readline().strip(), "epoch,split,metric,value")
            self.assertEqual(read_metrics_csv(path), rows)

    def test_write_summary(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = write_summary(tmpdir, {'best_score': 0.75, 'metric': 'accuracy'})
            self.assertEqual(os.path.basename(path), SUMMARY_FILE)
            with open(path) as f:
                self.assertEqual(json.load(f)['best_score'], 0.75)

    def test_update_status(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            state = make_state(tmpdir, current_phase=RunPhase.VALIDATION, epoch=4,
                               best_score=0.5, best_epoch=2, errors=['x'])
            update_status_file(state)

            with open(os.path.join(tmpdir, STATUS_FILE), 'r') as f:
                status = json.load(f)
            self.assertEqual(status['run_id'], 'run_123')
            self.assertEqual(status['current_phase'], 'validation')
            self.assertEqual(status['epoch'], 4)
            self.assertEqual(status['best_epoch'], 2)
            self.assertEqual(status['errors'], 1)


if __name__ == '__main__':
    unittest.main()
