"""Shared enums and the training workflow state."""

from typing import TypedDict, Annotated, List, Optional, Dict, Any, Tuple
from enum import Enum
import operator


class Modality(str, Enum):
    """Input channels of a multimodal event."""
    VIDEO = "v"
    SPEECH = "s"
    TEXT = "t"


# Fixed order for concatenation and module stacking.
MODALITY_ORDER: Tuple[Modality, ...] = (Modality.VIDEO, Modality.SPEECH, Modality.TEXT)


def ordered(modalities) -> Tuple[Modality, ...]:
    """Return the given modalities in canonical (video, speech, text) order."""
    present = set(modalities)
    return tuple(m for m in MODALITY_ORDER if m in present)


class Task(str, Enum):
    """Prediction pathway."""
    CLASSIFICATION = "classification"
    TRANSLATION = "translation"


class FusionKind(str, Enum):
    """How unimodal latents are combined."""
    CONCAT = "concat"
    AUTO = "auto"
    GAN = "gan"


class RunPhase(str, Enum):
    """Training workflow phases."""
    IDLE = "idle"
    PREPARATION = "preparation"
    TRAINING = "training"
    VALIDATION = "validation"
    COMPLETED = "completed"


class MetricRow(TypedDict):
    """One RunRecord row."""
    epoch: int
    split: str
    metric: str
    value: float


class LossRow(TypedDict):
    """Loss decomposition of one optimizer step."""
    epoch: int
    step: int
    j_fusion: float
    j_task: float
    j_total: float
    lambda_fusion: float
    lambda_task: float


class TrainingState(TypedDict):
    """State carried through the training workflow graph."""

    # Metadata
    run_id: str
    run_dir: str
    config: Any            # ExperimentConfig
    session: Any           # harness.TrainingSession, built during preparation

    # Current state
    current_phase: RunPhase
    phase_history: Annotated[List[RunPhase], operator.add]
    epoch: int

    # Early stopping
    best_score: Optional[float]
    best_epoch: int
    epochs_without_improvement: int
    best_snapshot: Optional[Dict[str, Any]]
    stop_reason: Optional[str]
    summary: Dict[str, Any]

    # RunRecord and loss log (accumulate)
    records: Annotated[List[MetricRow], operator.add]
    loss_log: Annotated[List[LossRow], operator.add]

    # Error tracking (accumulates)
    errors: Annotated[List[str], operator.add]
    failure: Optional[BaseException]   # exception behind the last error
