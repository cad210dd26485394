"""Seeded synthetic multimodal corpora, vocabularies, batching and dataset files."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DatasetError, InvalidArgumentError
from .state import Modality, Task

logger = logging.getLogger(__name__)

SCHEMA_HEADER = "#schema=fuselab-v1"
SPLITS = ("train", "valid", "test")
SPLIT_FRACTIONS = (0.8, 0.1, 0.1)
INTERACTION_CORPUS = "interaction"
TRANSLATION_CORPUS = "toy_translation"

# Independent RNG streams derived from one master seed.
STREAM_DATA = 0
STREAM_INIT = 1
STREAM_SHUFFLE = 2
STREAM_DROPOUT = 3
STREAM_NOISE = 4
STREAM_WORD_DROP = 5
STREAM_SAMPLE = 6


def stream(seed: int, stream_id: int, *extra: int) -> np.random.Generator:
    """Generator for one named stream of the master ``seed``."""
    return np.random.default_rng([int(seed), stream_id, *[int(e) for e in extra]])


class Vocabulary:
    """Token/id maps with reserved ids PAD=0, SOS=1, EOS=2, UNK=3."""

    PAD = 0
    SOS = 1
    EOS = 2
    UNK = 3
    RESERVED = ("<pad>", "<s>", "</s>", "<unk>")

    def __init__(self, tokens: Iterable[str] = ()):
        content = sorted(set(tokens) - set(self.RESERVED))
        self.itos: List[str] = list(self.RESERVED) + content
        self.stoi: Dict[str, int] = {tok: i for i, tok in enumerate(self.itos)}

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]]) -> "Vocabulary":
        return cls(tok for sentence in sentences for tok in sentence)

    def __len__(self) -> int:
        return len(self.itos)

    def encode(self, tokens: Sequence[str]) -> List[int]:
        return [self.stoi.get(tok, self.UNK) for tok in tokens]

    def decode(self, ids: Sequence[int]) -> List[str]:
        return [self.itos[i] if 0 <= i < len(self.itos) else self.RESERVED[self.UNK] for i in ids]

    def content_tokens(self) -> List[str]:
        return self.itos[len(self.RESERVED):]


@dataclass
class MultimodalSample:
    """One event. ``topic_id`` is a hidden generative factor kept for evaluation only."""
    topic_id: int
    video: Optional[np.ndarray] = None
    speech: Optional[np.ndarray] = None
    text: Optional[List[str]] = None
    label: Optional[int] = None
    target: Optional[List[str]] = None

    def modalities(self) -> Tuple[Modality, ...]:
        present = []
        if self.video is not None:
            present.append(Modality.VIDEO)
        if self.speech is not None:
            present.append(Modality.SPEECH)
        if self.text is not None:
            present.append(Modality.TEXT)
        return tuple(present)


@dataclass
class Dataset:
    task: Task
    samples: List[MultimodalSample]
    corpus: str = ""   # generator name from the file header, empty for foreign data

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def topics(self) -> np.ndarray:
        return np.array([s.topic_id for s in self.samples], dtype=np.int64)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset(self.task, [self.samples[i] for i in indices], self.corpus)


@dataclass
class SyntheticCorpus:
    """Generated splits plus the generative prototypes (for oracles and tests)."""
    task: Task
    splits: Dict[str, Dataset]
    prototypes: Dict[str, np.ndarray] = field(default_factory=dict)
    lexicon: Dict[Tuple[str, int], str] = field(default_factory=dict)


def _split_bounds(n: int) -> List[Tuple[int, int]]:
    train_end = int(round(n * SPLIT_FRACTIONS[0]))
    valid_end = train_end + int(round(n * SPLIT_FRACTIONS[1]))
    return [(0, train_end), (train_end, valid_end), (valid_end, n)]


def _noisy(prototype: np.ndarray, noise_std: float, rng: np.random.Generator) -> np.ndarray:
    return prototype + noise_std * rng.normal(size=prototype.shape)


FILLER_WORDS = ("today", "again", "here", "now", "slowly", "clearly", "there", "once")


def gen_interaction_dataset(n: int, seed: int, speech_width: int = 32, video_width: int = 48,
                            noise_std: float = 0.3) -> SyntheticCorpus:
    """Trimodal classification corpus whose label needs speech AND video.

    Hidden bits a, b, c: speech is a noisy prototype of (a, c), video a noisy
    prototype of b, and the text is a filler sentence independent of all bits.
    The label is 2 * (a XOR b) + c over 4 classes; the topic id is 2 * a + b.
    """
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}")
    rng = stream(seed, STREAM_DATA)
    speech_protos = rng.normal(size=(2, 2, speech_width))
    video_protos = rng.normal(size=(2, video_width))
    bits = rng.integers(0, 2, size=(n, 3))

    samples = []
    for i, (a, b, c) in enumerate(bits):
        sample_rng = stream(seed, STREAM_SAMPLE, i)
        speech = _noisy(speech_protos[a, c], noise_std, sample_rng)
        video = _noisy(video_protos[b], noise_std, sample_rng)
        fillers = [FILLER_WORDS[k] for k in sample_rng.integers(0, len(FILLER_WORDS), size=2)]
        samples.append(MultimodalSample(
            topic_id=int(2 * a + b),
            video=video,
            speech=speech,
            text=["the", "speaker", "says"] + fillers,
            label=int(2 * (a ^ b) + c),
        ))

    splits = {
        name: Dataset(Task.CLASSIFICATION, samples[lo:hi], INTERACTION_CORPUS)
        for name, (lo, hi) in zip(SPLITS, _split_bounds(n))
    }
    logger.info(f"Generated interaction corpus: n={n}, seed={seed}, noise={noise_std}")
    return SyntheticCorpus(
        Task.CLASSIFICATION, splits,
        prototypes={"speech": speech_protos, "video": video_protos},
    )


def reorder(tokens: Sequence[str]) -> List[str]:
    """Swap each adjacent pair: (t0 t1)(t2 t3)... -> t1 t0 t3 t2 ..."""
    out = list(tokens)
    for i in range(0, len(out) - 1, 2):
        out[i], out[i + 1] = out[i + 1], out[i]
    return out


def gen_toy_translation(n: int, seed: int, vocab_size: int = 24, ambiguity_rate: float = 0.0,
                        jargon_rate: float = 0.5, n_topics: int = 4, jargon_per_topic: int = 3, speech_width: int = 32, video_width: int = 48,
                        noise_std: float = 0.3, min_len: int = 4, max_len: int = 10) -> SyntheticCorpus:
    """Parallel corpus with a token-wise lexicon, pairwise reordering and topic homographs.

    A fraction ``ambiguity_rate`` of source word types are homographs whose
    translation depends on the sample topic. Speech and video carry the topic as
    noisy prototypes, so only multimodal models can resolve homographs.

    A share ``jargon_rate`` of sentences also use words that only occur under their
    topic (``j<topic>_<k>``, translated unambiguously). A third of such a
    sentence's positions are jargon, so its text hints at the topic while the
    remaining sentences leave homographs to the other modalities.
    """
    if vocab_size < 20:
        raise InvalidArgumentError(f"vocab_size must be >= 20, got {vocab_size}")
    if not 0.0 <= ambiguity_rate <= 1.0:
        raise InvalidArgumentError(f"ambiguity_rate must lie in [0, 1], got {ambiguity_rate}")
    if not 0.0 <= jargon_rate <= 1.0:
        raise InvalidArgumentError(f"jargon_rate must lie in [0, 1], got {jargon_rate}")
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}")
    rng = stream(seed, STREAM_DATA)
    mapping = rng.permutation(vocab_size)
    n_homographs = int(round(ambiguity_rate * vocab_size))
    homographs = set(int(i) for i in rng.choice(vocab_size, size=n_homographs, replace=False))
    speech_protos = rng.normal(size=(n_topics, speech_width))
    video_protos = rng.normal(size=(n_topics, video_width))
    topics = rng.integers(0, n_topics, size=n)

    lexicon: Dict[Tuple[str, int], str] = {}
    for i in range(vocab_size):
        for topic in range(n_topics):
            lexicon[(f"w{i}", topic)] = f"h{mapping[i]}_{topic}" if i in homographs else f"x{mapping[i]}"
    for topic in range(n_topics):
        for k in range(jargon_per_topic):
            for context in range(n_topics):
                lexicon[(f"j{topic}_{k}", context)] = f"y{topic}_{k}"

    samples = []
    for i, topic in enumerate(topics):
        sample_rng = stream(seed, STREAM_SAMPLE, i)
        length = int(sample_rng.integers(min_len, max_len + 1))
        source = [f"w{k}" for k in sample_rng.integers(0, vocab_size, size=length)]
        if sample_rng.random() < jargon_rate:
            positions = sample_rng.choice(length, size=max(1, length // 3), replace=False)
            for pos in positions:
                source[pos] = f"j{topic}_{sample_rng.integers(0, jargon_per_topic)}"
        target = reorder([lexicon[(tok, int(topic))] for tok in source])
        samples.append(MultimodalSample(
            topic_id=int(topic),
            video=_noisy(video_protos[topic], noise_std, sample_rng),
            speech=_noisy(speech_protos[topic], noise_std, sample_rng),
            text=source,
            target=target,
        ))

    splits = {
        name: Dataset(Task.TRANSLATION, samples[lo:hi], TRANSLATION_CORPUS)
        for name, (lo, hi) in zip(SPLITS, _split_bounds(n))
    }
    logger.info(
        f"Generated translation corpus: n={n}, seed={seed}, vocab={vocab_size}, "
        f"homographs={n_homographs}, jargon={jargon_rate}"
    )
    return SyntheticCorpus(
        Task.TRANSLATION, splits,
        prototypes={"speech": speech_protos, "video": video_protos},
        lexicon=lexicon,
    )


def apply_word_drop(tokens: Sequence[int], p: float,
                    seed: Union[int, np.random.Generator]) -> List[int]:
    """Replace each non-reserved token id by UNK with probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise InvalidArgumentError(f"word drop probability must lie in [0, 1], got {p}")
    tokens = [int(t) for t in tokens]
    if p == 0.0:
        return tokens
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    draws = rng.random(len(tokens))
    reserved = len(Vocabulary.RESERVED)
    return [Vocabulary.UNK if tok >= reserved and u < p else tok for tok, u in zip(tokens, draws)]


# batching

@dataclass
class Batch:
    """Model inputs for a group of samples. Topic ids are never part of a batch."""
    size: int
    video: Optional[np.ndarray] = None
    speech: Optional[np.ndarray] = None
    text_ids: Optional[np.ndarray] = None
    text_lengths: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    decoder_inputs: Optional[np.ndarray] = None
    decoder_targets: Optional[np.ndarray] = None
    references: Optional[List[List[int]]] = None

    def features(self, modality: Modality) -> np.ndarray:
        return {Modality.VIDEO: self.video, Modality.SPEECH: self.speech}[modality]


def _pad(sequences: Sequence[Sequence[int]], fill: int = Vocabulary.PAD) -> np.ndarray:
    width = max(len(s) for s in sequences)
    out = np.full((len(sequences), width), fill, dtype=np.int64)
    for row, seq in enumerate(sequences):
        out[row, :len(seq)] = seq
    return out


def make_batch(samples: Sequence[MultimodalSample], modalities: Sequence[Modality], task: Task,
               source_vocab: Optional[Vocabulary] = None, target_vocab: Optional[Vocabulary] = None,
               word_drop_p: float = 0.0, drop_rng: Optional[np.random.Generator] = None) -> Batch:
    batch = Batch(size=len(samples))
    for modality in modalities:
        missing = [i for i, s in enumerate(samples) if modality not in s.modalities()]
        if missing:
            raise DatasetError(f"modality '{modality.value}' missing from sample {missing[0]}")
    if Modality.VIDEO in modalities:
        batch.video = np.stack([s.video for s in samples])
    if Modality.SPEECH in modalities:
        batch.speech = np.stack([s.speech for s in samples])
    if Modality.TEXT in modalities:
        if source_vocab is None:
            raise InvalidArgumentError("text modality needs a source vocabulary")
        ids = [source_vocab.encode(s.text) for s in samples]
        if word_drop_p > 0.0:
            ids = [apply_word_drop(seq, word_drop_p, drop_rng) for seq in ids]
        if any(len(seq) == 0 for seq in ids):
            raise DatasetError("text modality contains a zero-length sequence")
        batch.text_ids = _pad(ids)
        batch.text_lengths = np.array([len(seq) for seq in ids], dtype=np.int64)
    if task is Task.CLASSIFICATION:
        batch.labels = np.array([s.label for s in samples], dtype=np.int64)
    else:
        if target_vocab is None:
            raise InvalidArgumentError("translation needs a target vocabulary")
        refs = [target_vocab.encode(s.target) for s in samples]
        batch.references = refs
        batch.decoder_inputs = _pad([[Vocabulary.SOS] + r for r in refs])
        batch.decoder_targets = _pad([r + [Vocabulary.EOS] for r in refs])
    return batch


def batch_indices(n: int, batch_size: int, rng: Optional[np.random.Generator] = None) -> List[np.ndarray]:
    """Split ``n`` indices into batches of at least ``batch_size`` (one batch if n is smaller)."""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    n_batches = max(1, n // batch_size)
    return [chunk for chunk in np.array_split(order, n_batches) if len(chunk)]


# dataset files

def _format_vector(vector: Optional[np.ndarray]) -> str:
    if vector is None:
        return ""
    return ",".join(repr(float(x)) for x in vector)


def _parse_vector(field_text: str, path: str, line_no: int) -> Optional[np.ndarray]:
    if not field_text:
        return None
    try:
        return np.array([float(x) for x in field_text.split(",")], dtype=np.float64)
    except ValueError:
        raise DatasetError(f"{path}:{line_no}: malformed feature vector") from None


def write_dataset(path: str, dataset: Dataset) -> None:
    """Write one record per line; the topic id is the sidecar first column."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        corpus = f"\tcorpus={dataset.corpus}" if dataset.corpus else ""
        f.write(f"{SCHEMA_HEADER}\ttask={dataset.task.value}{corpus}\n")
        for s in dataset.samples:
            if dataset.task is Task.CLASSIFICATION:
                label_or_target = str(s.label)
            else:
                label_or_target = " ".join(s.target or [])
            fields = [
                str(s.topic_id),
                label_or_target,
                " ".join(s.text) if s.text is not None else "",
                _format_vector(s.speech),
                _format_vector(s.video),
            ]
            f.write("\t".join(fields) + "\n")


def read_dataset(path: str) -> Dataset:
    if not os.path.exists(path):
        raise DatasetError(f"dataset file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().split("\n")
    if not lines or not lines[0].startswith(SCHEMA_HEADER):
        raise DatasetError(f"{path}: missing '{SCHEMA_HEADER}' header")
    header = dict(
        part.split("=", 1) for part in lines[0].split("\t")[1:] if "=" in part
    )
    try:
        task = Task(header.get("task", ""))
    except ValueError:
        raise DatasetError(f"{path}: header names unknown task '{header.get('task')}'") from None

    samples = []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 5:
            raise DatasetError(f"{path}:{line_no}: expected 5 fields, found {len(fields)}")
        topic, label_or_target, source, speech, video = fields
        try:
            topic_id = int(topic)
            label = int(label_or_target) if task is Task.CLASSIFICATION else None
        except ValueError:
            raise DatasetError(f"{path}:{line_no}: malformed topic id or label") from None
        samples.append(MultimodalSample(
            topic_id=topic_id,
            video=_parse_vector(video, path, line_no),
            speech=_parse_vector(speech, path, line_no),
            text=source.split(" ") if source else None,
            label=label,
            target=label_or_target.split(" ") if task is Task.TRANSLATION else None,
        ))
    logger.info(f"Loaded {len(samples)} {task.value} records from {path}")
    return Dataset(task, samples, header.get("corpus", ""))


def write_corpus(directory: str, corpus: SyntheticCorpus) -> Dict[str, str]:
    """Write train/valid/test files; returns split -> path."""
    paths = {}
    for name in SPLITS:
        path = os.path.join(directory, f"{name}.tsv")
        write_dataset(path, corpus.splits[name])
        paths[name] = path
    return paths
