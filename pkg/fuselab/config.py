"""Experiment configuration: dataclass defaults, key = value files and CLI flags."""

import argparse
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, Optional, Tuple, get_type_hints

from dotenv import load_dotenv

from .errors import ConfigError
from .state import FusionKind, Modality, Task, ordered

logger = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "FUSELAB_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "runs"

_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def default_output_root() -> str:
    """Output root from the environment (a .env file is honoured), else ``runs``."""
    load_dotenv()
    return os.getenv(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT)


@dataclass
class ExperimentConfig:
    # what to run
    task: Task = Task.CLASSIFICATION
    modalities: Tuple[Modality, ...] = (Modality.VIDEO, Modality.SPEECH, Modality.TEXT)
    fusion: FusionKind = FusionKind.AUTO

    # dimensions
    latent_v: int = 32
    latent_s: int = 32
    latent_t: int = 64
    d_fuse: int = 32
    d_noise: int = 8
    d_r: int = 0
    text_embedding: int = 32
    classifier_hidden: int = 64
    decoder_hidden: int = 64
    disc_hidden: int = 32
    n_classes: int = 4

    # objective
    lambda_fusion: float = 1.0
    lambda_task: float = 1.0
    classification_loss: str = "cross_entropy"
    generator_loss: str = "non_saturating"
    noise_sigma: float = 1.0
    gan_batch_norm: bool = False
    attention: bool = True
    decoder_conditioning: str = "init_state"
    dropout: float = 0.0

    # optimization
    lr: float = 1e-3
    disc_lr: float = 0.0
    epochs: int = 30
    batch_size: int = 32
    patience: int = 10
    seed: int = 0

    # data
    data_dir: str = ""
    train_path: str = ""
    valid_path: str = ""
    test_path: str = ""
    n_samples: int = 1000
    noise_std: float = 0.3
    ambiguity_rate: float = 0.0
    jargon_rate: float = 0.5
    vocab_size: int = 24

    # evaluation and output
    word_drop: float = 0.0
    max_decode_len: int = 24
    run_name: str = ""
    output_root: str = field(default_factory=default_output_root)

    @property
    def latent_dims(self) -> Dict[Modality, int]:
        return {Modality.VIDEO: self.latent_v, Modality.SPEECH: self.latent_s, Modality.TEXT: self.latent_t}

    @property
    def resolved_d_r(self) -> int:
        return self.d_r or self.d_fuse

    @property
    def resolved_disc_lr(self) -> float:
        return self.disc_lr or self.lr / 2.0

    def split_path(self, split: str) -> str:
        explicit = {"train": self.train_path, "valid": self.valid_path, "test": self.test_path}[split]
        if explicit:
            return explicit
        if not self.data_dir:
            raise ConfigError(f"no path for the {split} split: set data_dir or {split}_path")
        return os.path.join(self.data_dir, f"{split}.tsv")

    def validate(self) -> "ExperimentConfig":
        problems = []
        if self.lambda_fusion < 0 or self.lambda_task < 0:
            problems.append("lambda_fusion and lambda_task must be >= 0")
        if not self.modalities:
            problems.append("at least one modality is required")
        if self.fusion is FusionKind.GAN and len(self.modalities) < 2:
            problems.append("fusion=gan requires at least two modalities")
        if self.task is Task.TRANSLATION and Modality.TEXT not in self.modalities:
            problems.append("task=translation requires the text modality")
        for name in ("latent_v", "latent_s", "latent_t", "d_fuse", "d_noise", "text_embedding",
                     "classifier_hidden", "decoder_hidden", "disc_hidden", "epochs", "batch_size",
                     "max_decode_len", "n_samples"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be positive")
        if self.n_classes < 2:
            problems.append("n_classes must be >= 2")
        if self.d_r < 0 or self.patience < 1:
            problems.append("d_r must be >= 0 and patience >= 1")
        if self.lr <= 0 or self.disc_lr < 0:
            problems.append("lr must be > 0 and disc_lr >= 0")
        if not 0.0 <= self.dropout < 1.0:
            problems.append("dropout must lie in [0, 1)")
        if not 0.0 <= self.word_drop <= 1.0:
            problems.append("word_drop must lie in [0, 1]")
        if not 0.0 <= self.ambiguity_rate <= 1.0:
            problems.append("ambiguity_rate must lie in [0, 1]")
        if not 0.0 <= self.jargon_rate <= 1.0:
            problems.append("jargon_rate must lie in [0, 1]")
        if self.gan_batch_norm and self.fusion is FusionKind.GAN and self.batch_size < 2:
            problems.append("gan_batch_norm needs batch_size >= 2")
        if self.noise_sigma < 0 or self.noise_std < 0:
            problems.append("noise_sigma and noise_std must be >= 0")
        if self.classification_loss not in ("cross_entropy", "hinge"):
            problems.append(f"unknown classification_loss '{self.classification_loss}'")
        if self.generator_loss not in ("non_saturating", "minimax"):
            problems.append(f"unknown generator_loss '{self.generator_loss}'")
        if self.decoder_conditioning not in ("init_state", "every_step"):
            problems.append(f"unknown decoder_conditioning '{self.decoder_conditioning}'")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    def to_text(self) -> str:
        """Serialize as ``key = value`` lines that ``parse_config_text`` reads back."""
        return "".join(f"{f.name} = {format_value(getattr(self, f.name))}\n" for f in fields(self))

    def as_dict(self) -> Dict[str, Any]:
        return {name: format_value(value) for name, value in asdict(self).items()}

    def with_overrides(self, **overrides: Any) -> "ExperimentConfig":
        return replace(self, **overrides)


_FIELD_TYPES = get_type_hints(ExperimentConfig)


def format_value(value: Any) -> str:
    if isinstance(value, tuple):
        return ",".join(m.value for m in value)
    if isinstance(value, (Task, FusionKind)):
        return value.value
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def parse_modalities(text: str) -> Tuple[Modality, ...]:
    tokens = [t for t in text.replace(",", " ").split()]
    if len(tokens) == 1 and len(tokens[0]) > 1:
        tokens = list(tokens[0])
    try:
        parsed = [Modality(t.strip().lower()) for t in tokens]
    except ValueError:
        raise ConfigError(f"unknown modality in '{text}' (use v, s, t)") from None
    if len(set(parsed)) != len(parsed):
        raise ConfigError(f"duplicate modality in '{text}'")
    return ordered(parsed)


def parse_value(name: str, text: str) -> Any:
    if name not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key '{name}'")
    kind = _FIELD_TYPES[name]
    text = text.strip()
    try:
        if name == "modalities":
            return parse_modalities(text)
        if kind is bool:
            lowered = text.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(text)
        if kind in (Task, FusionKind, int, float):
            return kind(text)
        return text
    except ValueError:
        raise ConfigError(f"invalid value for '{name}': '{text}'") from None


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, Any]:
    values: Dict[str, Any] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{line_no}: expected 'key = value', got '{raw.strip()}'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = parse_value(key, value)
    return values


def load_config_file(path: str) -> Dict[str, Any]:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return parse_config_text(f.read(), source=path)


def config_from_text(text: str) -> ExperimentConfig:
    return ExperimentConfig(**parse_config_text(text)).validate()


def add_config_arguments(parser: argparse.ArgumentParser) -> None:
    """One ``--flag-name`` per config field; unset flags stay out of the namespace."""
    parser.add_argument("--config", help="key = value file; flags override it")
    for f in fields(ExperimentConfig):
        parser.add_argument(
            "--" + f.name.replace("_", "-"), dest=f.name, default=argparse.SUPPRESS,
            metavar=f.name.upper(), help=f"(default: {format_value(_default_of(f))})",
        )


def _default_of(f) -> Any:
    if f.name == "output_root":
        return f"${OUTPUT_ROOT_ENV} or {DEFAULT_OUTPUT_ROOT}"
    return f.default


def config_from_args(args: argparse.Namespace, **fixed: Any) -> ExperimentConfig:
    """Defaults, then the config file, then explicit flags, then ``fixed``."""
    values: Dict[str, Any] = {}
    config_path: Optional[str] = getattr(args, "config", None)
    if config_path:
        values.update(load_config_file(config_path))
    for f in fields(ExperimentConfig):
        if f.name in vars(args):
            values[f.name] = parse_value(f.name, str(getattr(args, f.name)))
    values.update(fixed)
    config = ExperimentConfig(**values).validate()
    logger.debug(f"Resolved config: {config.as_dict()}")
    return config
