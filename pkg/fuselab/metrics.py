"""Evaluation metrics: corpus BLEU, macro P/R/F1 with accuracy, silhouette."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Dict, Hashable, List, Sequence, Tuple

import numpy as np
from sklearn.metrics import precision_recall_fscore_support, silhouette_score

from .errors import DimensionError, InvalidArgumentError

logger = logging.getLogger(__name__)

Sentence = Sequence[Hashable]


@dataclass
class BleuReport:
    """Corpus BLEU-1..4 on a 0-100 scale."""
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    brevity_penalty: float
    precisions: List[float] = field(default_factory=list)
    candidate_length: int = 0
    reference_length: int = 0

    def score(self, order: int) -> float:
        return getattr(self, f"bleu{order}")

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass
class ClassificationReport:
    precision: float
    recall: float
    f1: float
    accuracy: float

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


def _ngrams(sentence: Sentence, n: int) -> Counter:
    return Counter(tuple(sentence[i:i + n]) for i in range(len(sentence) + 1 - n))


def _modified_counts(candidate: Sentence, reference: Sentence, n: int) -> Tuple[int, int]:
    """(clipped matches, total candidate n-grams) for one pair."""
    counts = _ngrams(candidate, n)
    if not counts:
        return 0, 0
    ref_counts = _ngrams(reference, n)
    clipped = sum(min(count, ref_counts[gram]) for gram, count in counts.items())
    return clipped, sum(counts.values())


def _brevity_penalty(c: int, r: int) -> float:
    if c >= r:
        return 1.0
    if c == 0:
        return 0.0
    return math.exp(1.0 - r / c)


def corpus_bleu(candidates: Sequence[Sentence], references: Sequence[Sentence],
                max_order: int = 4) -> BleuReport:
    """Single-reference corpus BLEU with n-gram counts pooled over the corpus, no smoothing."""
    if len(candidates) != len(references):
        raise DimensionError(
            f"corpus_bleu: {len(candidates)} candidates vs {len(references)} references"
        )
    if not candidates:
        raise InvalidArgumentError("corpus_bleu: empty corpus")
    if max_order < 1:
        raise InvalidArgumentError(f"corpus_bleu: max_order must be >= 1, got {max_order}")

    matches = [0] * max_order
    totals = [0] * max_order
    c = r = 0
    for candidate, reference in zip(candidates, references):
        c += len(candidate)
        r += len(reference)
        for n in range(1, max_order + 1):
            clipped, total = _modified_counts(candidate, reference, n)
            matches[n - 1] += clipped
            totals[n - 1] += total

    precisions = [m / t if t else 0.0 for m, t in zip(matches, totals)]
    bp = _brevity_penalty(c, r)
    scores = []
    for order in range(1, 5):
        if order > max_order or any(p == 0.0 for p in precisions[:order]):
            scores.append(0.0)
            continue
        s = math.fsum(math.log(p) for p in precisions[:order]) / order
        scores.append(100.0 * bp * math.exp(s))
    return BleuReport(*scores, brevity_penalty=bp, precisions=precisions,
                      candidate_length=c, reference_length=r)


def classification_report(predictions: Sequence[int], labels: Sequence[int],
                          n_classes: int) -> ClassificationReport:
    """Macro P/R/F1 over the classes that occur in labels or predictions, plus accuracy."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape or predictions.ndim != 1:
        raise DimensionError(
            f"classification_report: predictions {predictions.shape} vs labels {labels.shape}"
        )
    if labels.size == 0:
        raise InvalidArgumentError("classification_report: empty input")
    for name, values in (("labels", labels), ("predictions", predictions)):
        if values.min() < 0 or values.max() >= n_classes:
            raise InvalidArgumentError(f"classification_report: {name} outside [0, {n_classes})")
    precision, recall, f1, _ = precision_recall_fscore_support(
        labels, predictions, average="macro", zero_division=0
    )
    accuracy = float(np.mean(predictions == labels))
    return ClassificationReport(float(precision), float(recall), float(f1), accuracy)


def silhouette(points: np.ndarray, group_ids: Sequence[int]) -> float:
    """Mean Euclidean silhouette; singleton groups contribute 0."""
    points = np.asarray(points, dtype=np.float64)
    group_ids = np.asarray(group_ids)
    if points.ndim != 2 or group_ids.shape != (points.shape[0],):
        raise DimensionError(f"silhouette: points {points.shape} vs groups {group_ids.shape}")
    n_groups = len(np.unique(group_ids))
    if n_groups < 2:
        raise InvalidArgumentError("silhouette: needs at least two groups")
    if n_groups == points.shape[0]:
        # every group is a singleton
        return 0.0
    return float(silhouette_score(points, group_ids, metric="euclidean"))
