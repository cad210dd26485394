"""Conditional routing functions for training workflow transitions."""

from typing import Literal
import logging

from .state import TrainingState

logger = logging.getLogger(__name__)


def route_after_preparation(
    state: TrainingState
) -> Literal["train_epoch", "completion"]:
    """Skip straight to completion when the session could not be built."""
    if state.get('errors'):
        logger.debug("Preparation failed, routing to completion")
        return "completion"
    return "train_epoch"


def route_after_train(
    state: TrainingState
) -> Literal["validation", "completion"]:
    """
    Route after a training epoch.

    Returns:
        "validation" - Score the epoch
        "completion" - The epoch raised, stop the run
    """
    if state.get('errors'):
        logger.debug("Training epoch failed, routing to completion")
        return "completion"
    return "validation"


def route_after_validation(
    state: TrainingState
) -> Literal["train_epoch", "completion"]:
    """
    Route after validation.

    Returns:
        "train_epoch" - Keep training
        "completion" - Epoch budget spent, patience exhausted, or an error
    """
    if state.get('errors'):
        return "completion"

    if state.get('stop_reason'):
        logger.info(f"Stopping after epoch {state['epoch']}: {state['stop_reason']}")
        return "completion"

    return "train_epoch"
