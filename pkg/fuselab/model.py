"""Full network: modality encoders, a fusion stage and one task head."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ExperimentConfig
from .data import Batch
from .encoders import EncoderBank, LatentBundle
from .fusion import AutoFusion, ConcatFusion, FusionOutput
from .gan_fusion import GanFusionStack
from .heads import (
    AttentiveDecoder, ClassifierHead, classification_loss, decode_greedy, teacher_forced_loss,
)
from .layers import Module, Parameter, dropout
from .state import FusionKind, Modality, Task

logger = logging.getLogger(__name__)


@dataclass
class ForwardResult:
    j_fusion: Tensor
    j_task: Tensor
    fusion: FusionOutput
    bundle: LatentBundle
    logits: Optional[Tensor] = None


class FusionNetwork(Module):
    """Encoders, then concat / Auto-Fusion / GAN-Fusion, then a classifier or a decoder."""

    def __init__(self, config: ExperimentConfig, feature_widths: Dict[Modality, int],
                 source_vocab_size: int, target_vocab_size: int, rng: np.random.Generator):
        super().__init__()
        self.config = config
        self.task = config.task
        self.fusion_kind = config.fusion
        latent_dims = config.latent_dims
        self.encoders = self.add_module("encoders", EncoderBank(
            config.modalities, feature_widths, latent_dims, source_vocab_size,
            config.text_embedding, rng,
        ))
        if config.fusion is FusionKind.CONCAT:
            fusion = ConcatFusion(config.modalities, latent_dims)
        elif config.fusion is FusionKind.AUTO:
            fusion = AutoFusion(config.modalities, latent_dims, config.d_fuse, rng)
        else:
            fusion = GanFusionStack(
                config.modalities, latent_dims, config.d_fuse, config.resolved_d_r, config.d_noise,
                config.disc_hidden, rng, batch_norm=config.gan_batch_norm,
                noise_sigma=config.noise_sigma, generator_loss_variant=config.generator_loss,
            )
        self.fusion = self.add_module("fusion", fusion)
        if config.task is Task.CLASSIFICATION:
            self.head = self.add_module("head", ClassifierHead(
                fusion.out_dim, config.classifier_hidden, config.n_classes, rng,
            ))
        else:
            self.head = self.add_module("head", AttentiveDecoder(
                target_vocab_size, config.text_embedding, config.decoder_hidden, fusion.out_dim,
                config.latent_t, rng, attention=config.attention,
                conditioning=config.decoder_conditioning,
            ))
        self.bind_names()

    @property
    def is_gan(self) -> bool:
        return self.fusion_kind is FusionKind.GAN

    def discriminator_parameters(self) -> List[Parameter]:
        return self.fusion.discriminator_parameters() if self.is_gan else []

    def model_parameters(self) -> List[Parameter]:
        """Every parameter except the discriminators'."""
        excluded = {id(p) for p in self.discriminator_parameters()}
        return [p for p in self.parameters() if id(p) not in excluded]

    def fuse(self, bundle: LatentBundle, noise_rng: Optional[np.random.Generator] = None) -> FusionOutput:
        if self.is_gan:
            return self.fusion(bundle, noise_rng)
        return self.fusion(bundle)

    def forward(self, batch: Batch, noise_rng: Optional[np.random.Generator] = None,
                dropout_rng: Optional[np.random.Generator] = None) -> ForwardResult:
        """Encode, fuse and score the task loss on one batch."""
        bundle = self.encoders.encode(batch)
        fused = self.fuse(bundle, noise_rng)
        z = dropout(fused.z_fuse, self.config.dropout, self.training, dropout_rng)
        if self.task is Task.CLASSIFICATION:
            logits = self.head(z)
            j_task = classification_loss(logits, batch.labels, self.config.classification_loss)
            return ForwardResult(fused.j_fusion, j_task, fused, bundle, logits)
        j_task = teacher_forced_loss(
            self.head, z, bundle.text_states, bundle.text_mask,
            batch.decoder_inputs, batch.decoder_targets,
        )
        return ForwardResult(fused.j_fusion, j_task, fused, bundle)

    def predict(self, batch: Batch):
        """Deterministic inference: class ids, or greedy token sequences, plus the fusion output."""
        with ad.no_grad():
            bundle = self.encoders.encode(batch)
            fused = self.fuse(bundle, None)
            if self.task is Task.CLASSIFICATION:
                return np.argmax(self.head(fused.z_fuse).data, axis=1), fused
            outputs = decode_greedy(self.head, fused.z_fuse, bundle.text_states, bundle.text_mask,
                                    self.config.max_decode_len)
            return outputs, fused
