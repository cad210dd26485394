"""LangGraph training workflow node implementations."""

from typing import Dict, Any
import os
import logging

from .checkpoint import save_checkpoint
from .harness import (
    epoch_loss_means,
    evaluate_dataset,
    load_split,
    prepare_session,
    primary_metric,
    run_epoch,
    snapshot,
    to_checkpoint,
)
from .helpers import (
    transition_phase,
    add_metric_rows,
    add_error,
    metric_rows,
    update_status_file,
    write_metrics_csv,
    write_summary,
    METRICS_FILE,
)
from .layers import count_parameters
from .state import TrainingState, RunPhase

logger = logging.getLogger(__name__)


def _validation_metrics(state: TrainingState) -> Dict[str, float]:
    session = state['session']
    return evaluate_dataset(
        session.network, session.config, session.datasets['valid'],
        session.source_vocab, session.target_vocab,
    )


def preparation_node(state: TrainingState) -> Dict[str, Any]:
    """
    Build the training session.

    Loads the train and valid splits, builds vocabularies, the network and
    its optimizers, and records the untrained validation metrics as epoch 0.
    """
    logger.info(f"Preparing run {state['run_id']}")

    try:
        os.makedirs(state['run_dir'], exist_ok=True)
        session = prepare_session(state['config'])
        state = {**state, 'session': session}
        metrics = _validation_metrics(state)

        result = {
            **transition_phase(state, RunPhase.TRAINING),
            **add_metric_rows(state, 0, 'valid', metrics),
            'session': session,
            'epoch': 0,
        }
        update_status_file({**state, **result})
        return result

    except Exception as e:
        logger.error(f"Error in preparation_node: {e}")
        return add_error(state, f"Preparation failed: {type(e).__name__}: {e}", e)


def train_epoch_node(state: TrainingState) -> Dict[str, Any]:
    """Run one pass over the shuffled training split."""
    epoch = state['epoch'] + 1

    try:
        loss_rows = run_epoch(state['session'], epoch)
        means = epoch_loss_means(loss_rows)
        logger.info(
            f"Epoch {epoch}: j_total={means['j_total']:.5f} "
            f"(j_fusion={means['j_fusion']:.5f}, j_task={means['j_task']:.5f})"
        )
        return {
            **transition_phase(state, RunPhase.VALIDATION),
            **add_metric_rows(state, epoch, 'train', means),
            'epoch': epoch,
            'loss_log': loss_rows,
        }

    except Exception as e:
        logger.error(f"Error in train_epoch_node: {e}")
        return add_error(state, f"Epoch {epoch} failed: {type(e).__name__}: {e}", e)


def validation_node(state: TrainingState) -> Dict[str, Any]:
    """
    Score the validation split and apply early stopping.

    Keeps an in-memory snapshot of the best epoch. Sets stop_reason once the
    epoch budget is spent or the metric has not improved for `patience` epochs.
    """
    epoch = state['epoch']
    config = state['config']

    try:
        metrics = _validation_metrics(state)
        metric = primary_metric(config.task)
        score = metrics[metric]
        result: Dict[str, Any] = add_metric_rows(state, epoch, 'valid', metrics)

        best = state.get('best_score')
        if best is None or score > best:
            logger.info(f"Epoch {epoch}: new best {metric} {score:.4f}")
            result.update({
                'best_score': score,
                'best_epoch': epoch,
                'best_snapshot': snapshot(state['session']),
                'epochs_without_improvement': 0,
            })
            stale = 0
        else:
            stale = state.get('epochs_without_improvement', 0) + 1
            result['epochs_without_improvement'] = stale
            logger.info(f"Epoch {epoch}: {metric} {score:.4f} (best {best:.4f}, {stale} stale)")

        if epoch >= config.epochs:
            result['stop_reason'] = 'max_epochs'
        elif stale >= config.patience:
            logger.info(f"Early stopping after {stale} epochs without improvement")
            result['stop_reason'] = 'early_stopping'

        next_phase = RunPhase.VALIDATION if result.get('stop_reason') else RunPhase.TRAINING
        result.update(transition_phase(state, next_phase))
        update_status_file({**state, **result})
        return result

    except Exception as e:
        logger.error(f"Error in validation_node: {e}")
        return add_error(state, f"Validation at epoch {epoch} failed: {type(e).__name__}: {e}", e)


def completion_node(state: TrainingState) -> Dict[str, Any]:
    """
    Write the run artifacts.

    last.ckpt holds the final weights and best.ckpt the best validation
    snapshot. The best weights are then scored on the test split when one is
    configured. metrics.csv and summary.json close the run.
    """
    logger.info(f"Completing run {state['run_id']}")
    session = state.get('session')

    if state.get('errors') or session is None:
        result = transition_phase(state, RunPhase.COMPLETED)
        update_status_file({**state, **result})
        return result

    try:
        run_dir = state['run_dir']
        config = state['config']
        save_checkpoint(os.path.join(run_dir, 'last.ckpt'), to_checkpoint(session))
        best = state.get('best_snapshot') or snapshot(session)
        save_checkpoint(os.path.join(run_dir, 'best.ckpt'), to_checkpoint(session, best))

        records = []
        test_metrics = None
        if config.test_path or config.data_dir:
            session.network.load_state_dict(best['tensors'])
            test = load_split(config, 'test')
            test_metrics = evaluate_dataset(session.network, config, test,
                                            session.source_vocab, session.target_vocab)
            records = metric_rows(state['epoch'], 'test', test_metrics)

        write_metrics_csv(os.path.join(run_dir, METRICS_FILE), list(state['records']) + records)
        summary = {
            'run_id': state['run_id'],
            'config': config.as_dict(),
            'metric': primary_metric(config.task),
            'best_score': state.get('best_score'),
            'best_epoch': state.get('best_epoch', 0),
            'epochs_run': state['epoch'],
            'stop_reason': state.get('stop_reason'),
            'steps': session.step,
            'parameter_count': count_parameters(session.network),
            'test': test_metrics,
        }
        write_summary(run_dir, summary)

        result = {
            **transition_phase(state, RunPhase.COMPLETED),
            'records': records,
            'summary': summary,
        }
        update_status_file({**state, **result})
        return result

    except Exception as e:
        logger.error(f"Error in completion_node: {e}")
        return add_error(state, f"Completion failed: {type(e).__name__}: {e}", e)
