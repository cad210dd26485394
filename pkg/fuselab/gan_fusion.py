"""Adversarial fusion: one generator/discriminator module per target modality."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoders import LatentBundle
from .errors import FusionUnavailableError, InvalidArgumentError
from .fusion import AutoFusionNet, FusionOutput, autofuse, zero_loss
from .layers import LEAKY_SLOPE, Affine, BatchNorm, Module, Parameter, frozen
from .state import Modality, ordered

logger = logging.getLogger(__name__)

LOG_CLAMP = 1e-12
GENERATOR_LOSSES = ("non_saturating", "minimax")


class Generator(Module):
    """affine(d_m + d_noise -> d_r) [+ batch norm] + LeakyReLU + affine(d_r -> d_r)."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, batch_norm: bool = False):
        super().__init__()
        self.hidden = self.add_module("hidden", Affine(in_dim, out_dim, rng))
        self.norm = self.add_module("bn", BatchNorm(out_dim)) if batch_norm else None
        self.out = self.add_module("out", Affine(out_dim, out_dim, rng))

    def __call__(self, x: Tensor) -> Tensor:
        h = self.hidden(x)
        if self.norm is not None:
            h = self.norm(h)
        return self.out(ad.leaky_relu(h, LEAKY_SLOPE))


class Discriminator(Module):
    """affine(d_r -> h_D) + LeakyReLU + affine(h_D -> 1) + sigmoid."""

    def __init__(self, in_dim: int, hidden_dim: int, rng: np.random.Generator):
        super().__init__()
        self.hidden = self.add_module("hidden", Affine(in_dim, hidden_dim, rng))
        self.out = self.add_module("out", Affine(hidden_dim, 1, rng))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.sigmoid(self.out(ad.leaky_relu(self.hidden(x), LEAKY_SLOPE)))


@dataclass
class GanForward:
    z_g: Tensor
    z_tr: Tensor
    j_reconstruction: Tensor


class GanFusionModule(Module):
    """Aligns one target modality with the autofused complementary modalities."""

    def __init__(self, target: Modality, complements: Sequence[Modality], latent_dims: Dict[Modality, int],
                 d_r: int, d_noise: int, disc_hidden: int, rng: np.random.Generator,
                 batch_norm: bool = False):
        super().__init__()
        self.target = target
        self.complements = ordered(complements)
        if not self.complements:
            raise FusionUnavailableError(
                f"GAN-Fusion for '{target.value}' needs at least one complementary modality"
            )
        self.d_r = d_r
        self.d_noise = d_noise
        self.generator = self.add_module("G", Generator(latent_dims[target] + d_noise, d_r, rng, batch_norm))
        self.discriminator = self.add_module("D", Discriminator(d_r, disc_hidden, rng))
        # A single complement whose width already equals d_r is used as z_tr directly;
        # otherwise the complements are autofused down to d_r.
        if len(self.complements) == 1 and latent_dims[self.complements[0]] == d_r:
            self.complement_fusion: Optional[AutoFusionNet] = None
        else:
            self.complement_fusion = self.add_module(
                "autofuse", AutoFusionNet([latent_dims[m] for m in self.complements], d_r, rng)
            )


def sample_noise(rng: Optional[np.random.Generator], batch: int, d_noise: int, sigma: float) -> np.ndarray:
    if rng is None or sigma == 0.0:
        return np.zeros((batch, d_noise))
    return sigma * rng.normal(size=(batch, d_noise))


def gan_forward(module: GanFusionModule, bundle: LatentBundle,
                noise_rng: Optional[np.random.Generator] = None, sigma: float = 1.0) -> GanForward:
    """z_g = G(z_m ++ eps); z_tr = the autofused complementary latents."""
    missing = [m.value for m in (module.target,) + module.complements if m not in bundle]
    if missing:
        raise FusionUnavailableError(
            f"GAN-Fusion module '{module.target.value}' is missing modalities {missing}"
        )
    z_m = bundle[module.target]
    eps = Tensor(sample_noise(noise_rng, z_m.shape[0], module.d_noise, sigma))
    z_g = module.generator(ad.concat([z_m, eps], axis=1))
    if module.complement_fusion is None:
        return GanForward(z_g, bundle[module.complements[0]], zero_loss())
    inner = autofuse(module.complement_fusion, [bundle[m] for m in module.complements])
    return GanForward(z_g, inner.z_fuse, inner.j_fusion)


def _log_clamped(p: Tensor) -> Tensor:
    return ad.log(ad.clamp(p, LOG_CLAMP, 1.0))


def discriminator_loss(module: GanFusionModule, z_tr: Tensor, z_g: Tensor) -> Tensor:
    """-[mean log D(z_tr) + mean log(1 - D(z_g))]; both inputs are detached."""
    d_real = module.discriminator(z_tr.detach())
    d_fake = module.discriminator(z_g.detach())
    return -(ad.mean(_log_clamped(d_real)) + ad.mean(_log_clamped(1.0 - d_fake)))


def generator_loss(module: GanFusionModule, z_g: Tensor, variant: str = "non_saturating") -> Tensor:
    """Generator side of the adversarial loss with the discriminator frozen."""
    if variant not in GENERATOR_LOSSES:
        raise InvalidArgumentError(f"unknown generator loss '{variant}'")
    with frozen(module.discriminator):
        d_fake = module.discriminator(z_g)
    if variant == "non_saturating":
        return -ad.mean(_log_clamped(d_fake))
    return ad.mean(_log_clamped(1.0 - d_fake))


class GanFusionStack(Module):
    """One module per present modality; F_c maps the concatenated z_g to z_fuse."""

    def __init__(self, modalities, latent_dims: Dict[Modality, int], d_fuse: int, d_r: int,
                 d_noise: int, disc_hidden: int, rng: np.random.Generator, batch_norm: bool = False,
                 noise_sigma: float = 1.0, generator_loss_variant: str = "non_saturating"):
        super().__init__()
        self.modalities = ordered(modalities)
        if len(self.modalities) < 2:
            raise FusionUnavailableError("GAN-Fusion needs at least two modalities")
        if generator_loss_variant not in GENERATOR_LOSSES:
            raise InvalidArgumentError(f"unknown generator loss '{generator_loss_variant}'")
        self.out_dim = d_fuse
        self.noise_sigma = noise_sigma
        self.generator_loss_variant = generator_loss_variant
        self.gan_modules: Dict[Modality, GanFusionModule] = {}
        for target in self.modalities:
            complements = [m for m in self.modalities if m is not target]
            module = GanFusionModule(target, complements, latent_dims, d_r, d_noise, disc_hidden,
                                     rng, batch_norm)
            self.gan_modules[target] = self.add_module(target.name.lower(), module)
        self.fc = self.add_module("F_c", Affine(d_r * len(self.modalities), d_fuse, rng))

    def discriminator_parameters(self) -> List[Parameter]:
        return [p for module in self.gan_modules.values() for p in module.discriminator.parameters()]

    def discriminators(self) -> List[Module]:
        return [module.discriminator for module in self.gan_modules.values()]

    def __call__(self, bundle: LatentBundle, noise_rng: Optional[np.random.Generator] = None) -> FusionOutput:
        return fuse(self, bundle, noise_rng)

    def discriminator_objective(self, bundle: LatentBundle,
                                noise_rng: Optional[np.random.Generator] = None) -> Tensor:
        """Sum of per-module discriminator losses on freshly generated samples.

        Discriminators share no parameters, so one step on the sum updates each
        one exactly as its own step would.
        """
        with ad.no_grad():
            forwards = {m: gan_forward(module, bundle, noise_rng, self.noise_sigma)
                        for m, module in self.gan_modules.items()}
        losses = [discriminator_loss(module, forwards[m].z_tr, forwards[m].z_g)
                  for m, module in self.gan_modules.items()]
        total = losses[0]
        for loss in losses[1:]:
            total = total + loss
        return total


def fuse(stack: GanFusionStack, bundle: LatentBundle,
         noise_rng: Optional[np.random.Generator] = None) -> FusionOutput:
    """Run every module; J_fusion sums generator losses and inner reconstruction losses."""
    missing = [m.value for m in stack.modalities if m not in bundle]
    if missing:
        raise FusionUnavailableError(f"GAN-Fusion is missing modalities {missing}")
    generated = []
    extras: Dict[str, Tensor] = {}
    j_fusion = zero_loss()
    for target, module in stack.gan_modules.items():
        forward = gan_forward(module, bundle, noise_rng, stack.noise_sigma)
        j_fusion = j_fusion + generator_loss(module, forward.z_g, stack.generator_loss_variant)
        j_fusion = j_fusion + forward.j_reconstruction
        generated.append(forward.z_g)
        extras[f"z_g.{target.value}"] = forward.z_g
        extras[f"z_tr.{target.value}"] = forward.z_tr
    z_fuse = stack.fc(ad.concat(generated, axis=1))
    return FusionOutput(z_fuse=z_fuse, j_fusion=j_fusion, extras=extras)
