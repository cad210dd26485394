"""Exception hierarchy shared by every fuselab module."""

from typing import Optional


class FuselabError(Exception):
    """Base class for all fuselab failures."""


class InvalidArgumentError(FuselabError, ValueError):
    """An argument is outside its documented range."""


class DimensionError(FuselabError, ValueError):
    """Tensor shapes do not agree for the requested operation."""


class NumericDomainError(FuselabError, ArithmeticError):
    """An operation left its numeric domain (log of non-positive, overflow, ...)."""


class GraphError(FuselabError, RuntimeError):
    """Backward pass requested on an invalid or already consumed graph."""


class OptimizerError(FuselabError, RuntimeError):
    """An optimizer step found a parameter without a gradient."""


class VocabularyError(FuselabError, ValueError):
    """Token ids fall outside the vocabulary."""


class FusionUnavailableError(FuselabError, ValueError):
    """A GAN-Fusion module has no complementary modality to align against."""


class ConfigError(FuselabError, ValueError):
    """An experiment configuration is malformed or violates an invariant."""


class DatasetError(FuselabError, ValueError):
    """A dataset file is malformed or does not match the expected schema."""


class CheckpointError(FuselabError, IOError):
    """A checkpoint file cannot be written or decoded."""


class NonFiniteLossError(FuselabError, ArithmeticError):
    """A training loss term became NaN or infinite."""

    def __init__(self, term: str, value: float, step: Optional[int] = None):
        self.term = term
        self.value = value
        self.step = step
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"non-finite loss term '{term}' = {value}{where}")


class TrainingError(FuselabError, RuntimeError):
    """A training run stopped with a recorded error."""
