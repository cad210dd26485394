"""Helper functions for workflow state updates and run-directory files."""

from typing import Dict, Any, List, Mapping, Optional
from datetime import datetime
import csv
import json
import os

from .state import RunPhase, MetricRow, TrainingState

METRICS_FILE = "metrics.csv"
SUMMARY_FILE = "summary.json"
STATUS_FILE = "status.json"
METRIC_FIELDS = ("epoch", "split", "metric", "value")


def transition_phase(state: TrainingState, new_phase: RunPhase) -> Dict[str, Any]:
    """Helper to transition to a new phase and update phase history."""
    return {
        'current_phase': new_phase,
        'phase_history': [new_phase]  # Appends due to operator.add
    }


def metric_rows(epoch: int, split: str, metrics: Mapping[str, float]) -> List[MetricRow]:
    """One RunRecord row per scalar metric, in sorted metric-name order."""
    return [
        {'epoch': epoch, 'split': split, 'metric': name, 'value': float(value)}
        for name, value in sorted(metrics.items())
    ]


def add_metric_rows(state: TrainingState, epoch: int, split: str,
                    metrics: Mapping[str, float]) -> Dict[str, Any]:
    return {'records': metric_rows(epoch, split, metrics)}


def add_error(state: TrainingState, error_message: str,
              exc: Optional[BaseException] = None) -> Dict[str, Any]:
    """Add timestamped error to state, keeping the exception for train() to re-raise."""
    update: Dict[str, Any] = {
        'errors': [f"{datetime.now().isoformat()} - {error_message}"]
    }
    if exc is not None:
        update['failure'] = exc
    return update


def write_metrics_csv(path: str, rows: List[MetricRow]) -> None:
    """Write the RunRecord as ``epoch,split,metric,value``."""
    with open(path, 'w', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=METRIC_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({**row, 'value': repr(float(row['value']))})


def read_metrics_csv(path: str) -> List[MetricRow]:
    with open(path, 'r', newline='') as f:
        return [
            {'epoch': int(r['epoch']), 'split': r['split'], 'metric': r['metric'],
             'value': float(r['value'])}
            for r in csv.DictReader(f)
        ]


def write_summary(run_dir: str, summary: Dict[str, Any]) -> str:
    path = os.path.join(run_dir, SUMMARY_FILE)
    with open(path, 'w') as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    return path


def update_status_file(state: TrainingState) -> None:
    """Update <run_dir>/status.json with current state."""
    status = {
        'run_id': state['run_id'],
        'current_phase': state['current_phase'].value,
        'epoch': state.get('epoch', 0),
        'best_score': state.get('best_score'),
        'best_epoch': state.get('best_epoch', 0),
        'stop_reason': state.get('stop_reason'),
        'errors': len(state.get('errors', [])),
        'last_updated': datetime.now().isoformat()
    }

    status_file = os.path.join(state['run_dir'], STATUS_FILE)
    with open(status_file, 'w') as f:
        json.dump(status, f, indent=2)
