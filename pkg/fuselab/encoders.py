"""Per-modality learners mapping raw inputs to unimodal latent vectors."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Batch
from .errors import DimensionError, InvalidArgumentError
from .layers import Affine, Embedding, LSTMCell, Module
from .state import Modality, ordered

logger = logging.getLogger(__name__)


@dataclass
class LatentBundle:
    """Unimodal latents of one batch plus the text states used by attention."""
    latents: Dict[Modality, Tensor]
    text_states: Optional[Tensor] = None
    text_mask: Optional[np.ndarray] = None
    extras: Dict[str, Tensor] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.latents:
            raise DimensionError("a latent bundle needs at least one modality")
        if Modality.TEXT in self.latents and (self.text_states is None or self.text_mask is None):
            raise DimensionError("text latents must come with their state sequence and mask")

    @property
    def present(self) -> Tuple[Modality, ...]:
        return ordered(self.latents)

    @property
    def batch_size(self) -> int:
        return next(iter(self.latents.values())).shape[0]

    def __getitem__(self, modality: Modality) -> Tensor:
        return self.latents[modality]

    def __contains__(self, modality: Modality) -> bool:
        return modality in self.latents


class TextEncoder(Module):
    """Embedding lookup followed by an unrolled LSTM."""

    def __init__(self, vocab_size: int, embedding_dim: int, hidden_size: int, rng: np.random.Generator):
        super().__init__()
        self.embedding = self.add_module("embedding", Embedding(vocab_size, embedding_dim, rng))
        self.lstm = self.add_module("lstm", LSTMCell(embedding_dim, hidden_size, rng))
        self.hidden_size = hidden_size

    def __call__(self, token_ids: np.ndarray, lengths: np.ndarray) -> Tuple[Tensor, Tensor, np.ndarray]:
        return encode_text(self, token_ids, lengths)


def encode_text(encoder: TextEncoder, token_ids: np.ndarray,
                lengths: np.ndarray) -> Tuple[Tensor, Tensor, np.ndarray]:
    """Return (z_t, states, mask).

    z_t is the hidden state after each sequence's true length. Steps past the
    length carry the previous state forward unchanged, so trailing padding never
    alters z_t; the mask marks real positions for attention.
    """
    token_ids = np.asarray(token_ids, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    if token_ids.ndim != 2 or lengths.shape != (token_ids.shape[0],):
        raise DimensionError(f"encode_text: ids {token_ids.shape} vs lengths {lengths.shape}")
    batch, width = token_ids.shape
    if np.any(lengths < 1):
        raise InvalidArgumentError("encode_text: zero-length sequence")
    if np.any(lengths > width):
        raise DimensionError(f"encode_text: length exceeds padded width {width}")

    h, c = encoder.lstm.initial_state(batch)
    states = []
    mask = np.arange(width)[None, :] < lengths[:, None]
    for t in range(width):
        x_t = encoder.embedding(token_ids[:, t])
        h_new, c_new = encoder.lstm(x_t, h, c)
        live = mask[:, t:t + 1].astype(np.float64)
        h = h_new * live + h * (1.0 - live)
        c = c_new * live + c * (1.0 - live)
        states.append(h)
    return h, ad.stack(states, axis=1), mask


class Standardizer(Module):
    """Per-feature standardization with statistics frozen from the training split."""

    def __init__(self, width: int):
        super().__init__()
        self.width = width
        self.register_buffer("mean", np.zeros(width))
        self.register_buffer("std", np.ones(width))

    def fit(self, features: np.ndarray) -> None:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != self.width:
            raise DimensionError(f"standardizer expects width {self.width}, got {features.shape}")
        std = features.std(axis=0)
        self.set_buffer("mean", features.mean(axis=0))
        self.set_buffer("std", np.where(std > 1e-12, std, 1.0))

    def __call__(self, features: np.ndarray) -> np.ndarray:
        return (features - self.buffer("mean")) / self.buffer("std")


class VectorEncoder(Module):
    """Feed-forward learner for pre-extracted speech or video features."""

    def __init__(self, modality: Modality, input_width: int, latent_dim: int, rng: np.random.Generator):
        super().__init__()
        self.modality = modality
        self.input_width = input_width
        self.latent_dim = latent_dim
        self.norm = self.add_module("norm", Standardizer(input_width))
        self.proj = self.add_module("proj", Affine(input_width, latent_dim, rng))

    def __call__(self, features: np.ndarray) -> Tensor:
        return encode_vector_modality(self, features)


def encode_vector_modality(encoder: VectorEncoder, features: np.ndarray) -> Tensor:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != encoder.input_width:
        raise DimensionError(
            f"{encoder.modality.name.lower()} features have shape {features.shape}, "
            f"expected width {encoder.input_width}"
        )
    return ad.tanh(encoder.proj(Tensor(encoder.norm(features))))


class EncoderBank(Module):
    """One learner per configured modality."""

    def __init__(self, modalities, feature_widths: Dict[Modality, int], latent_dims: Dict[Modality, int],
                 vocab_size: int, embedding_dim: int, rng: np.random.Generator):
        super().__init__()
        self.modalities = ordered(modalities)
        self.latent_dims = {m: latent_dims[m] for m in self.modalities}
        self.encoders: Dict[Modality, Module] = {}
        for modality in self.modalities:
            if modality is Modality.TEXT:
                encoder = TextEncoder(vocab_size, embedding_dim, latent_dims[modality], rng)
                name = "text"
            else:
                encoder = VectorEncoder(modality, feature_widths[modality], latent_dims[modality], rng)
                name = "video" if modality is Modality.VIDEO else "speech"
            self.encoders[modality] = self.add_module(name, encoder)

    def fit_normalizers(self, batch: Batch) -> None:
        for modality, encoder in self.encoders.items():
            if isinstance(encoder, VectorEncoder):
                encoder.norm.fit(batch.features(modality))
                logger.debug(f"Fitted {modality.name.lower()} standardizer on {batch.size} samples")

    def encode(self, batch: Batch) -> LatentBundle:
        latents: Dict[Modality, Tensor] = {}
        states, mask = None, None
        for modality, encoder in self.encoders.items():
            if modality is Modality.TEXT:
                latents[modality], states, mask = encoder(batch.text_ids, batch.text_lengths)
            else:
                latents[modality] = encoder(batch.features(modality))
        return LatentBundle(latents, text_states=states, text_mask=mask)
