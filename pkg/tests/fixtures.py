"""Tiny corpora and configurations shared by the integration and e2e suites."""

import os

from fuselab.config import ExperimentConfig
from fuselab.data import gen_interaction_dataset, gen_toy_translation, write_corpus
from fuselab.state import FusionKind, Task

TINY = {
    'latent_v': 4,
    'latent_s': 4,
    'latent_t': 4,
    'd_fuse': 4,
    'd_noise': 2,
    'text_embedding': 4,
    'classifier_hidden': 8,
    'decoder_hidden': 8,
    'disc_hidden': 4,
    'batch_size': 16,
    'epochs': 2,
    'patience': 5,
    'max_decode_len': 12,
}


def write_tiny_corpus(directory, task=Task.CLASSIFICATION, n=60, seed=0):
    """Write train/valid/test files of a small synthetic corpus into ``directory``."""
    if task is Task.CLASSIFICATION:
        corpus = gen_interaction_dataset(n, seed, speech_width=6, video_width=5)
    else:
        corpus = gen_toy_translation(n, seed, vocab_size=20, speech_width=6, video_width=5, max_len=6)
    return write_corpus(directory, corpus)


def tiny_config(directory, task=Task.CLASSIFICATION, fusion=FusionKind.AUTO, **overrides):
    data_dir = os.path.join(directory, f"data-{task.value}")
    if not os.path.exists(os.path.join(data_dir, "train.tsv")):
        write_tiny_corpus(data_dir, task)
    values = {**TINY, **overrides}
    values.setdefault('output_root', os.path.join(directory, "runs"))
    return ExperimentConfig(task=task, fusion=fusion, data_dir=data_dir, **values).validate()


def apply_update(state, update):
    """Merge a node's partial update into the state the way the graph reducers do."""
    merged = dict(state)
    for key, value in update.items():
        if key in ('phase_history', 'records', 'loss_log', 'errors'):
            merged[key] = list(state.get(key, [])) + list(value)
        else:
            merged[key] = value
    return merged
