"""Task heads: a classifier over z_fuse and an attentive sequence decoder."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Vocabulary
from .errors import DimensionError, InvalidArgumentError
from .layers import (
    LEAKY_SLOPE, Affine, Embedding, LSTMCell, Module, multiclass_hinge,
    softmax_cross_entropy, uniform_init,
)

logger = logging.getLogger(__name__)

CLASSIFICATION_LOSSES = ("cross_entropy", "hinge")
DECODER_CONDITIONING = ("init_state", "every_step")


class ClassifierHead(Module):
    """affine(d_fuse -> h) + LeakyReLU + affine(h -> C)."""

    def __init__(self, in_dim: int, hidden_dim: int, n_classes: int, rng: np.random.Generator):
        super().__init__()
        self.in_dim = in_dim
        self.n_classes = n_classes
        self.hidden = self.add_module("hidden", Affine(in_dim, hidden_dim, rng))
        self.out = self.add_module("out", Affine(hidden_dim, n_classes, rng))

    def __call__(self, z_fuse: Tensor) -> Tensor:
        return classify(self, z_fuse)


def classify(head: ClassifierHead, z_fuse: Tensor) -> Tensor:
    if z_fuse.ndim != 2 or z_fuse.shape[1] != head.in_dim:
        raise DimensionError(f"classifier expects width {head.in_dim}, got {z_fuse.shape}")
    return head.out(ad.leaky_relu(head.hidden(z_fuse), LEAKY_SLOPE))


def classification_loss(logits: Tensor, labels: Sequence[int], kind: str = "cross_entropy") -> Tensor:
    if kind == "cross_entropy":
        return softmax_cross_entropy(logits, labels)
    if kind == "hinge":
        return multiclass_hinge(logits, labels)
    raise InvalidArgumentError(f"unknown classification loss '{kind}'")


@dataclass
class DecodeStep:
    logits: Tensor
    h: Tensor
    c: Tensor
    attention: Optional[Tensor]


class AttentiveDecoder(Module):
    """LSTM decoder bridged from z_fuse, with general-score attention over text states.

    With ``conditioning="every_step"`` z_fuse is also appended to every input
    embedding. With ``attention=False`` the output projection sees only h.
    """

    def __init__(self, vocab_size: int, embedding_dim: int, hidden_dim: int, fuse_dim: int,
                 context_dim: int, rng: np.random.Generator, attention: bool = True,
                 conditioning: str = "init_state"):
        super().__init__()
        if conditioning not in DECODER_CONDITIONING:
            raise InvalidArgumentError(f"unknown decoder conditioning '{conditioning}'")
        self.vocab_size = vocab_size
        self.hidden_dim = hidden_dim
        self.fuse_dim = fuse_dim
        self.context_dim = context_dim
        self.attention = attention
        self.conditioning = conditioning
        step_input = embedding_dim + (fuse_dim if conditioning == "every_step" else 0)
        self.embedding = self.add_module("embedding", Embedding(vocab_size, embedding_dim, rng))
        self.lstm = self.add_module("lstm", LSTMCell(step_input, hidden_dim, rng))
        self.bridge = self.add_module("bridge", Affine(fuse_dim, hidden_dim, rng))
        if attention:
            self.w_a = self.add_parameter("W_a", uniform_init(rng, hidden_dim, (hidden_dim, context_dim)))
            self.out = self.add_module("out", Affine(hidden_dim + context_dim, vocab_size, rng))
        else:
            self.w_a = None
            self.out = self.add_module("out", Affine(hidden_dim, vocab_size, rng))

    def initial_state(self, z_fuse: Tensor):
        if z_fuse.ndim != 2 or z_fuse.shape[1] != self.fuse_dim:
            raise DimensionError(f"decoder bridge expects width {self.fuse_dim}, got {z_fuse.shape}")
        h0 = ad.tanh(self.bridge(z_fuse))
        return h0, Tensor(np.zeros((z_fuse.shape[0], self.hidden_dim)))


def attend(h: Tensor, w_a: Tensor, states: Tensor, mask: np.ndarray):
    """Scores h^T W_a s_i over unmasked positions; returns (context, weights)."""
    batch, length, width = states.shape
    if mask.shape != (batch, length):
        raise DimensionError(f"attention mask {mask.shape} does not match states {states.shape}")
    query = ad.reshape(ad.matmul(h, w_a), (batch, width, 1))
    scores = ad.reshape(ad.matmul(states, query), (batch, length))
    weights = ad.softmax(scores, axis=1, mask=mask)
    context = ad.reshape(ad.matmul(ad.reshape(weights, (batch, 1, length)), states), (batch, width))
    return context, weights


def decode_step(decoder: AttentiveDecoder, prev_tokens: np.ndarray, h: Tensor, c: Tensor,
                z_fuse: Tensor, text_states: Optional[Tensor], mask: Optional[np.ndarray]) -> DecodeStep:
    x = decoder.embedding(prev_tokens)
    if decoder.conditioning == "every_step":
        x = ad.concat([x, z_fuse], axis=1)
    h, c = decoder.lstm(x, h, c)
    if not decoder.attention:
        return DecodeStep(decoder.out(h), h, c, None)
    if text_states is None or mask is None:
        raise InvalidArgumentError("attention needs text encoder states")
    context, weights = attend(h, decoder.w_a.value, text_states, mask)
    return DecodeStep(decoder.out(ad.concat([h, context], axis=1)), h, c, weights)


def teacher_forced_loss(decoder: AttentiveDecoder, z_fuse: Tensor, text_states: Optional[Tensor],
                        mask: Optional[np.ndarray], decoder_inputs: np.ndarray,
                        decoder_targets: np.ndarray) -> Tensor:
    """Token-mean cross entropy over non-PAD targets, feeding gold previous tokens."""
    decoder_inputs = np.asarray(decoder_inputs, dtype=np.int64)
    decoder_targets = np.asarray(decoder_targets, dtype=np.int64)
    if decoder_inputs.shape != decoder_targets.shape or decoder_inputs.shape[0] != z_fuse.shape[0]:
        raise DimensionError(
            f"decoder inputs {decoder_inputs.shape}, targets {decoder_targets.shape}, "
            f"z_fuse {z_fuse.shape} disagree"
        )
    h, c = decoder.initial_state(z_fuse)
    steps = []
    for t in range(decoder_inputs.shape[1]):
        step = decode_step(decoder, decoder_inputs[:, t], h, c, z_fuse, text_states, mask)
        h, c = step.h, step.c
        steps.append(step.logits)
    batch, width = decoder_targets.shape
    logits = ad.reshape(ad.stack(steps, axis=1), (batch * width, decoder.vocab_size))
    return softmax_cross_entropy(logits, decoder_targets.reshape(-1), ignore_index=Vocabulary.PAD)


def decode_greedy(decoder: AttentiveDecoder, z_fuse: Tensor, text_states: Optional[Tensor],
                  mask: Optional[np.ndarray], max_len: int) -> List[List[int]]:
    """Argmax decoding from SOS until EOS or ``max_len`` tokens; EOS is not returned."""
    if max_len < 1:
        raise InvalidArgumentError(f"max_len must be >= 1, got {max_len}")
    batch = z_fuse.shape[0]
    outputs: List[List[int]] = [[] for _ in range(batch)]
    finished = np.zeros(batch, dtype=bool)
    with ad.no_grad():
        h, c = decoder.initial_state(z_fuse)
        prev = np.full(batch, Vocabulary.SOS, dtype=np.int64)
        for _ in range(max_len):
            step = decode_step(decoder, prev, h, c, z_fuse, text_states, mask)
            h, c = step.h, step.c
            prev = np.argmax(step.logits.data, axis=1).astype(np.int64)
            for row in np.nonzero(~finished)[0]:
                if prev[row] == Vocabulary.EOS:
                    finished[row] = True
                else:
                    outputs[row].append(int(prev[row]))
            if finished.all():
                break
    return outputs
