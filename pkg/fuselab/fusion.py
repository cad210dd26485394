"""Static concatenation and compress-and-reconstruct (Auto-Fusion) fusion."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoders import LatentBundle
from .errors import DimensionError
from .layers import Affine, Module

logger = logging.getLogger(__name__)


@dataclass
class FusionOutput:
    """Fused representation and the fusion loss term it contributes."""
    z_fuse: Tensor
    j_fusion: Tensor
    extras: Dict[str, Tensor] = field(default_factory=dict)


def zero_loss() -> Tensor:
    return Tensor(np.array(0.0))


def squared_reconstruction_error(reconstruction: Tensor, target: Tensor) -> Tensor:
    """Batch mean of the per-sample squared Euclidean distance."""
    if reconstruction.shape != target.shape:
        raise DimensionError(
            f"reconstruction {reconstruction.shape} does not match target {target.shape}"
        )
    diff = reconstruction - target
    return ad.mean(ad.sum(diff * diff, axis=1))


def _check_batch(latents: Sequence[Tensor]) -> None:
    if not latents:
        raise DimensionError("fusion needs at least one latent")
    sizes = {z.shape[0] for z in latents}
    if len(sizes) != 1 or any(z.ndim != 2 for z in latents):
        raise DimensionError(f"latents disagree on batch size: {[z.shape for z in latents]}")


class AutoFusionNet(Module):
    """T: affine(k -> t) + tanh, F_c: affine(t -> k)."""

    def __init__(self, input_dims: Sequence[int], fused_dim: int, rng: np.random.Generator):
        super().__init__()
        self.input_dims = tuple(input_dims)
        self.k = int(sum(self.input_dims))
        self.t = fused_dim
        self.transform = self.add_module("T", Affine(self.k, fused_dim, rng))
        self.reconstruct = self.add_module("F_c", Affine(fused_dim, self.k, rng))

    def __call__(self, latents: Sequence[Tensor]) -> FusionOutput:
        return autofuse(self, latents)


def autofuse(net: AutoFusionNet, latents: Sequence[Tensor]) -> FusionOutput:
    """Compress the concatenated latents and score the reconstruction."""
    _check_batch(latents)
    widths = tuple(z.shape[1] for z in latents)
    if widths != net.input_dims:
        raise DimensionError(f"autofuse expects latent widths {net.input_dims}, got {widths}")
    z_k = ad.concat(list(latents), axis=1)
    z_t = ad.tanh(net.transform(z_k))
    z_k_hat = net.reconstruct(z_t)
    return FusionOutput(z_fuse=z_t, j_fusion=squared_reconstruction_error(z_k_hat, z_k))


class AutoFusion(Module):
    """Auto-Fusion over a latent bundle in canonical modality order."""

    def __init__(self, modalities, latent_dims: Dict, fused_dim: int, rng: np.random.Generator):
        super().__init__()
        self.modalities = tuple(modalities)
        self.out_dim = fused_dim
        self.net = self.add_module("net", AutoFusionNet([latent_dims[m] for m in self.modalities], fused_dim, rng))

    def __call__(self, bundle: LatentBundle) -> FusionOutput:
        return autofuse(self.net, [bundle[m] for m in self.modalities])


class ConcatFusion(Module):
    """Static baseline: z_fuse is the concatenation and J_fusion is identically zero."""

    def __init__(self, modalities, latent_dims: Dict):
        super().__init__()
        self.modalities = tuple(modalities)
        self.out_dim = int(sum(latent_dims[m] for m in self.modalities))

    def __call__(self, bundle: LatentBundle) -> FusionOutput:
        latents = [bundle[m] for m in self.modalities]
        _check_batch(latents)
        return FusionOutput(z_fuse=ad.concat(latents, axis=1), j_fusion=zero_loss())
