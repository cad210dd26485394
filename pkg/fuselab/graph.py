"""LangGraph training workflow construction."""

import os

from langgraph.graph import StateGraph, END

from .config import ExperimentConfig
from .harness import run_directory
from .state import TrainingState, RunPhase
from .nodes import preparation_node, train_epoch_node, validation_node, completion_node
from .routing import route_after_preparation, route_after_train, route_after_validation

NODES = {
    "preparation": preparation_node,
    "train_epoch": train_epoch_node,
    "validation": validation_node,
    "completion": completion_node,
}

# source node -> (router, targets the router may return)
ROUTES = {
    "preparation": (route_after_preparation, ("train_epoch", "completion")),
    "train_epoch": (route_after_train, ("validation", "completion")),
    "validation": (route_after_validation, ("train_epoch", "completion")),
}


def create_training_workflow() -> StateGraph:
    """Create and compile the training workflow graph."""
    workflow = StateGraph(TrainingState)
    for name, node in NODES.items():
        workflow.add_node(name, node)

    workflow.set_entry_point("preparation")
    for source, (router, targets) in ROUTES.items():
        workflow.add_conditional_edges(source, router, {target: target for target in targets})
    workflow.add_edge("completion", END)

    return workflow.compile()


def initial_state(config: ExperimentConfig) -> TrainingState:
    run_dir = run_directory(config)
    return {
        'run_id': os.path.basename(run_dir),
        'run_dir': run_dir,
        'config': config,
        'session': None,
        'current_phase': RunPhase.PREPARATION,
        'phase_history': [RunPhase.PREPARATION],
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


def recursion_limit(config: ExperimentConfig) -> int:
    """Two node visits per epoch plus preparation and completion."""
    return 2 * config.epochs + 10
