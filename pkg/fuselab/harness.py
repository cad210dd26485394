"""Experiment harness: sessions, the training step, evaluation, ablation and sweeps."""

from __future__ import annotations

import copy
import csv
import itertools
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .checkpoint import Checkpoint, load_checkpoint
from .config import ExperimentConfig, config_from_text
from .data import (
    INTERACTION_CORPUS, STREAM_DROPOUT, STREAM_INIT, STREAM_NOISE, STREAM_SHUFFLE, STREAM_WORD_DROP,
    Batch, Dataset, Vocabulary, batch_indices, make_batch, read_dataset, stream,
)
from .errors import ConfigError, DatasetError, FuselabError, NonFiniteLossError, TrainingError
from .layers import Adam, AdamState
from .metrics import classification_report, corpus_bleu, silhouette
from .model import FusionNetwork
from .state import FusionKind, LossRow, Modality, Task

logger = logging.getLogger(__name__)

DEFAULT_P_GRID = tuple(round(0.1 * i, 1) for i in range(10))
ABLATION_FIELDS = ("p", "bleu1", "bleu2", "bleu3", "bleu4")
TRAIN_STREAMS = {"shuffle": STREAM_SHUFFLE, "dropout": STREAM_DROPOUT, "noise": STREAM_NOISE}


@dataclass
class TrainingSession:
    """Everything one training run mutates."""
    config: ExperimentConfig
    network: FusionNetwork
    optimizer: Adam
    disc_optimizer: Optional[Adam]
    source_vocab: Vocabulary
    target_vocab: Optional[Vocabulary]
    feature_widths: Dict[Modality, int]
    datasets: Dict[str, Dataset]
    streams: Dict[str, np.random.Generator] = field(default_factory=dict)
    step: int = 0


def primary_metric(task: Task) -> str:
    return "accuracy" if task is Task.CLASSIFICATION else "bleu4"


def run_directory(config: ExperimentConfig) -> str:
    name = config.run_name or (
        f"{config.task.value}-{config.fusion.value}-"
        f"{''.join(m.value for m in config.modalities)}-seed{config.seed}"
    )
    return os.path.join(config.output_root, name)


# data plumbing

def load_split(config: ExperimentConfig, split: str) -> Dataset:
    dataset = read_dataset(config.split_path(split))
    if dataset.task is not config.task:
        raise DatasetError(
            f"{split} split holds {dataset.task.value} records but the run is {config.task.value}"
        )
    if len(dataset) == 0:
        raise DatasetError(f"{split} split is empty")
    return dataset


def build_vocabularies(train: Dataset) -> Tuple[Vocabulary, Optional[Vocabulary]]:
    source = Vocabulary.build(s.text for s in train.samples if s.text is not None)
    if train.task is Task.TRANSLATION:
        return source, Vocabulary.build(s.target for s in train.samples)
    return source, None


def feature_widths_of(dataset: Dataset, modalities: Sequence[Modality]) -> Dict[Modality, int]:
    first = dataset.samples[0]
    widths = {}
    for modality in modalities:
        if modality is Modality.TEXT:
            continue
        features = first.video if modality is Modality.VIDEO else first.speech
        if features is None:
            raise DatasetError(f"dataset has no '{modality.value}' features")
        widths[modality] = int(features.shape[0])
    return widths


def batch_for(config: ExperimentConfig, samples, source_vocab: Vocabulary,
              target_vocab: Optional[Vocabulary], word_drop_p: float = 0.0,
              drop_rng: Optional[np.random.Generator] = None) -> Batch:
    return make_batch(samples, config.modalities, config.task, source_vocab, target_vocab,
                      word_drop_p=word_drop_p, drop_rng=drop_rng)


def build_network(config: ExperimentConfig, feature_widths: Dict[Modality, int],
                  source_vocab: Vocabulary, target_vocab: Optional[Vocabulary]) -> FusionNetwork:
    return FusionNetwork(
        config, feature_widths, len(source_vocab),
        len(target_vocab) if target_vocab is not None else 0,
        stream(config.seed, STREAM_INIT),
    )


def prepare_session(config: ExperimentConfig) -> TrainingSession:
    """Load train/valid splits, build vocabularies, the network and both optimizers."""
    datasets = {split: load_split(config, split) for split in ("train", "valid")}
    if config.gan_batch_norm and config.fusion is FusionKind.GAN and len(datasets["train"]) < 2:
        raise DatasetError("gan_batch_norm needs at least 2 training samples per batch")
    source_vocab, target_vocab = build_vocabularies(datasets["train"])
    widths = feature_widths_of(datasets["train"], config.modalities)
    network = build_network(config, widths, source_vocab, target_vocab)
    network.encoders.fit_normalizers(
        batch_for(config, datasets["train"].samples, source_vocab, target_vocab)
    )
    optimizer = Adam(network.model_parameters(), lr=config.lr)
    disc_optimizer = None
    if network.is_gan:
        disc_optimizer = Adam(network.discriminator_parameters(), lr=config.resolved_disc_lr)
    streams = {name: stream(config.seed, sid) for name, sid in TRAIN_STREAMS.items()}
    logger.info(
        f"Prepared session: {len(datasets['train'])} train / {len(datasets['valid'])} valid samples, "
        f"source vocab {len(source_vocab)}, fusion={config.fusion.value}"
    )
    return TrainingSession(config, network, optimizer, disc_optimizer, source_vocab, target_vocab,
                           widths, datasets, streams)


# training

def _check_finite(term: str, value: float, step: int) -> None:
    if not math.isfinite(value):
        raise NonFiniteLossError(term, value, step)


def train_step(session: TrainingSession, batch: Batch, epoch: int) -> LossRow:
    """One batch: a discriminator step (GAN-Fusion only), then one step on J_total."""
    config, network = session.config, session.network
    noise = session.streams["noise"]
    network.train()

    if network.is_gan:
        ad.reset_graph()
        session.disc_optimizer.zero_grad()
        with ad.no_grad():
            bundle = network.encoders.encode(batch)
        d_loss = network.fusion.discriminator_objective(bundle, noise)
        _check_finite("discriminator", d_loss.item(), session.step)
        ad.backward(d_loss)
        session.disc_optimizer.step()

    ad.reset_graph()
    session.optimizer.zero_grad()
    result = network.forward(batch, noise, session.streams["dropout"])
    j_fusion, j_task = result.j_fusion.item(), result.j_task.item()
    _check_finite("j_fusion", j_fusion, session.step)
    _check_finite("j_task", j_task, session.step)
    total = config.lambda_fusion * result.j_fusion + config.lambda_task * result.j_task
    _check_finite("j_total", total.item(), session.step)
    ad.backward(total)
    session.optimizer.step()
    session.step += 1
    return {
        'epoch': epoch,
        'step': session.step,
        'j_fusion': j_fusion,
        'j_task': j_task,
        'j_total': total.item(),
        'lambda_fusion': config.lambda_fusion,
        'lambda_task': config.lambda_task,
    }


def run_epoch(session: TrainingSession, epoch: int) -> List[LossRow]:
    train = session.datasets["train"]
    rows = []
    for indices in batch_indices(len(train), session.config.batch_size, session.streams["shuffle"]):
        samples = [train.samples[i] for i in indices]
        batch = batch_for(session.config, samples, session.source_vocab, session.target_vocab)
        rows.append(train_step(session, batch, epoch))
    return rows


def epoch_loss_means(rows: Sequence[LossRow]) -> Dict[str, float]:
    return {key: float(np.mean([r[key] for r in rows])) for key in ("j_fusion", "j_task", "j_total")}


# evaluation

def evaluate_dataset(network: FusionNetwork, config: ExperimentConfig, dataset: Dataset,
                     source_vocab: Vocabulary, target_vocab: Optional[Vocabulary],
                     word_drop_p: float = 0.0,
                     drop_rng: Optional[np.random.Generator] = None) -> Dict[str, float]:
    """Deterministic metrics: eval mode, no dropout, zero GAN noise."""
    if dataset.task is not config.task:
        raise DatasetError(f"dataset holds {dataset.task.value} records, model is {config.task.value}")
    was_training = network.training
    network.eval()
    predictions: List[Any] = []
    generated: List[np.ndarray] = []
    try:
        for indices in batch_indices(len(dataset), config.batch_size):
            samples = [dataset.samples[i] for i in indices]
            batch = batch_for(config, samples, source_vocab, target_vocab, word_drop_p, drop_rng)
            outputs, fused = network.predict(batch)
            predictions.extend(outputs)
            if network.is_gan and Modality.TEXT in config.modalities:
                generated.append(fused.extras[f"z_g.{Modality.TEXT.value}"].data)
    finally:
        network.train(was_training)

    if config.task is Task.CLASSIFICATION:
        labels = np.array([s.label for s in dataset.samples])
        metrics = classification_report(predictions, labels, config.n_classes).as_dict()
        if dataset.corpus == INTERACTION_CORPUS:
            metrics["interaction_accuracy"] = float(np.mean(np.asarray(predictions) // 2 == labels // 2))
    else:
        references = [target_vocab.encode(s.target) for s in dataset.samples]
        report = corpus_bleu(predictions, references)
        metrics = {f"bleu{n}": report.score(n) for n in range(1, 5)}
        metrics["brevity_penalty"] = report.brevity_penalty

    topics = dataset.topics
    if generated and len(np.unique(topics)) >= 2:
        metrics["silhouette"] = silhouette(np.concatenate(generated, axis=0), topics)
    return metrics


# snapshots and checkpoints

def snapshot(session: TrainingSession) -> Dict[str, Any]:
    optimizers = {"model": session.optimizer.state}
    if session.disc_optimizer is not None:
        optimizers["discriminator"] = session.disc_optimizer.state
    return {
        "tensors": session.network.state_dict(),
        "optimizers": copy.deepcopy(optimizers),
        "rng_states": {name: copy.deepcopy(g.bit_generator.state) for name, g in session.streams.items()},
    }


def session_metadata(session: TrainingSession) -> Dict[str, Any]:
    return {
        "source_vocab": session.source_vocab.itos,
        "target_vocab": session.target_vocab.itos if session.target_vocab is not None else None,
        "feature_widths": {m.value: w for m, w in session.feature_widths.items()},
    }


def to_checkpoint(session: TrainingSession, snap: Optional[Dict[str, Any]] = None) -> Checkpoint:
    snap = snap or snapshot(session)
    return Checkpoint(
        tensors=snap["tensors"],
        optimizers=snap["optimizers"],
        rng_states=snap["rng_states"],
        config_text=session.config.to_text(),
        metadata=session_metadata(session),
    )


@dataclass
class LoadedModel:
    config: ExperimentConfig
    network: FusionNetwork
    source_vocab: Vocabulary
    target_vocab: Optional[Vocabulary]
    optimizers: Dict[str, AdamState]
    rng_states: Dict[str, dict]


def model_from_checkpoint(checkpoint: Checkpoint) -> LoadedModel:
    config = config_from_text(checkpoint.config_text)
    meta = checkpoint.metadata
    source_vocab = Vocabulary(meta.get("source_vocab", []))
    target_vocab = Vocabulary(meta["target_vocab"]) if meta.get("target_vocab") else None
    widths = {Modality(k): int(v) for k, v in meta.get("feature_widths", {}).items()}
    network = build_network(config, widths, source_vocab, target_vocab)
    network.load_state_dict(checkpoint.tensors)
    network.eval()
    return LoadedModel(config, network, source_vocab, target_vocab,
                       checkpoint.optimizers, checkpoint.rng_states)


# public operations

@dataclass
class TrainResult:
    run_dir: str
    best_checkpoint: str
    records: List[Dict[str, Any]]
    loss_log: List[LossRow]
    summary: Dict[str, Any]


def train(config: ExperimentConfig) -> TrainResult:
    """Run the training workflow graph and return its artifacts."""
    from .graph import create_training_workflow, initial_state, recursion_limit

    config.validate()
    for split in ("train", "valid"):
        path = config.split_path(split)
        if not os.path.exists(path):
            raise DatasetError(f"{split} split not found: {path}")
    workflow = create_training_workflow()
    final = workflow.invoke(initial_state(config), config={"recursion_limit": recursion_limit(config)})
    if final.get("errors"):
        failure = final.get("failure")
        if isinstance(failure, FuselabError):
            raise failure
        raise TrainingError(final["errors"][-1]) from failure
    run_dir = final["run_dir"]
    return TrainResult(
        run_dir=run_dir,
        best_checkpoint=os.path.join(run_dir, "best.ckpt"),
        records=list(final["records"]),
        loss_log=list(final["loss_log"]),
        summary=final["summary"],
    )


def word_drop_stream(seed: int, index: int) -> np.random.Generator:
    return stream(seed, STREAM_WORD_DROP, index)


def evaluate(checkpoint_path: str, dataset_path: str, word_drop_p: float = 0.0,
             drop_index: int = 0) -> Dict[str, float]:
    """Metrics of a saved model on a dataset file, optionally with word drop on its text."""
    if not 0.0 <= word_drop_p <= 1.0:
        raise ConfigError(f"word_drop must lie in [0, 1], got {word_drop_p}")
    loaded = model_from_checkpoint(load_checkpoint(checkpoint_path))
    dataset = read_dataset(dataset_path)
    drop_rng = word_drop_stream(loaded.config.seed, drop_index) if word_drop_p > 0 else None
    metrics = evaluate_dataset(loaded.network, loaded.config, dataset, loaded.source_vocab,
                               loaded.target_vocab, word_drop_p, drop_rng)
    logger.info(f"Evaluated {checkpoint_path} on {dataset_path} (p={word_drop_p}): {metrics}")
    return metrics


def ablate(checkpoint_path: str, dataset_path: str, p_grid: Sequence[float] = DEFAULT_P_GRID,
           output_path: Optional[str] = None) -> List[Dict[str, float]]:
    """Word-drop curve: one evaluation per p, each with its own drop stream."""
    loaded = model_from_checkpoint(load_checkpoint(checkpoint_path))
    if loaded.config.task is not Task.TRANSLATION:
        raise ConfigError("ablate needs a translation checkpoint")
    dataset = read_dataset(dataset_path)
    rows = []
    for index, p in enumerate(p_grid):
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"word drop probability {p} outside [0, 1]")
        drop_rng = word_drop_stream(loaded.config.seed, index) if p > 0 else None
        metrics = evaluate_dataset(loaded.network, loaded.config, dataset, loaded.source_vocab,
                                   loaded.target_vocab, p, drop_rng)
        rows.append({"p": float(p), **{f"bleu{n}": metrics[f"bleu{n}"] for n in range(1, 5)}})
        logger.info(f"Word drop p={p}: BLEU-4 {metrics['bleu4']:.2f}")
    if output_path:
        write_csv(output_path, ABLATION_FIELDS, rows)
    return rows


def write_csv(path: str, fieldnames: Sequence[str], rows: Sequence[Dict[str, Any]]) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(fieldnames))
        writer.writeheader()
        writer.writerows(rows)


SWEEP_FIELDS = ("run_name", "fusion", "lambda_fusion", "lambda_task", "best_epoch", "metric", "best_score")


def _sweep_one(config: ExperimentConfig) -> Dict[str, Any]:
    result = train(config)
    return {
        "run_name": config.run_name,
        "fusion": config.fusion.value,
        "lambda_fusion": config.lambda_fusion,
        "lambda_task": config.lambda_task,
        "best_epoch": result.summary["best_epoch"],
        "metric": result.summary["metric"],
        "best_score": result.summary["best_score"],
    }


def sweep_configs(base: ExperimentConfig, lambda_fusion: Sequence[float], lambda_task: Sequence[float],
                  fusions: Sequence[FusionKind]) -> List[ExperimentConfig]:
    prefix = base.run_name or "sweep"
    configs = []
    for fusion, lf, lt in itertools.product(fusions, lambda_fusion, lambda_task):
        configs.append(base.with_overrides(
            fusion=fusion, lambda_fusion=float(lf), lambda_task=float(lt),
            run_name=os.path.join(prefix, f"{fusion.value}-lf{lf:g}-lt{lt:g}"),
        ).validate())
    return configs


def sweep(base: ExperimentConfig, lambda_fusion: Sequence[float], lambda_task: Sequence[float],
          fusions: Sequence[FusionKind], workers: int = 1) -> List[Dict[str, Any]]:
    """Train the Cartesian grid into distinct run directories and write sweep.csv."""
    configs = sweep_configs(base, lambda_fusion, lambda_task, fusions)
    logger.info(f"Sweeping {len(configs)} configurations with {workers} worker(s)")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_one, configs))
    else:
        rows = [_sweep_one(c) for c in configs]
    write_csv(os.path.join(base.output_root, base.run_name or "sweep", "sweep.csv"), SWEEP_FIELDS, rows)
    return rows
