"""Encoder/decoder pairs and their first-stage objectives.

Four pairs are trained in the first stage, one per (domain, path)
combination: continuous photo, continuous art, quantized photo, and
quantized art. Quantized pairs carry a codebook and reconstruct through
the straight-through estimator so the encoder keeps receiving
gradients. Each pair owns a patch discriminator for its adversarial
term and trains independently of the other pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from quantart.nn import (
    Decoder,
    Encoder,
    Module,
    PatchDiscriminator,
    discriminator_loss,
    generator_loss,
)
from quantart.quantize import Codebook, QuantizationResult, quantize, vq_losses
from quantart.tensor import Tensor, stop_gradient, validation_enabled

RECON_WEIGHT = 1.0
ADV_WEIGHT = 0.8
CODEBOOK_WEIGHT = 1.0
COMMITMENT_WEIGHT = 0.25


class AutoencoderPair(Module):
    """One encoder/decoder pair, optionally quantizing through a codebook."""

    def __init__(self, *, in_channels, latent_dim, channels, num_entries,
                 rng, domain, quantized):
        self.domain = domain
        self.quantized = quantized
        self.encoder = Encoder(in_channels=in_channels, latent_dim=latent_dim,
                               channels=channels, rng=rng)
        self.decoder = Decoder(out_channels=in_channels, latent_dim=latent_dim,
                               channels=channels, rng=rng)
        # codebook first in param order would shift discriminator names;
        # keep insertion stable: encoder, decoder, codebook, discriminator
        self.codebook = (Codebook(num_entries, latent_dim, rng, domain=domain)
                         if quantized else None)
        self.discriminator = PatchDiscriminator(in_channels=in_channels,
                                                base=channels[0], rng=rng)

    def encode(self, x: Tensor) -> Tensor:
        return self.encoder(x)

    def decode(self, z: Tensor) -> Tensor:
        return self.decoder(z)


def _check_image(x: Tensor, channels: int):
    if x.ndim != 4 or x.shape[1] != channels:
        raise ValueError(
            f"expected (B, {channels}, H, W) images, got shape {x.shape}")
    if validation_enabled() and (x.data.min() < -1.0 or x.data.max() > 1.0):
        raise ValueError("image values outside [-1, 1]")


def reconstruct(pair: AutoencoderPair, x: Tensor):
    """Round-trip ``x`` through the pair.

    Returns (x_rec, latent, quantization) where quantization is None for
    continuous pairs. Quantized pairs decode the straight-through view,
    so every decoder input row is an exact codebook entry while the
    encoder stays differentiable.
    """
    _check_image(x, pair.encoder.in_channels)
    z = pair.encode(x)
    if pair.codebook is None:
        return pair.decode(z), z, None
    q = quantize(z, pair.codebook)
    return pair.decode(q.with_straight_through), z, q


@dataclass
class StageOneLossReport:
    recon_l1: float
    adv_gen: float
    adv_disc: float
    codebook_term: float
    commitment_term: float
    adv_weight: float           # effective weight after any warm-up ramp
    total: Tensor               # differentiable generator-side objective
    disc_total: Tensor          # differentiable discriminator objective

    def parts(self):
        return {
            "recon_l1": self.recon_l1,
            "adv_gen": self.adv_gen,
            "adv_disc": self.adv_disc,
            "codebook_term": self.codebook_term,
            "commitment_term": self.commitment_term,
        }


def ae_loss(x: Tensor, x_rec: Tensor, discriminator,
            adv_weight: float = ADV_WEIGHT) -> StageOneLossReport:
    """Reconstruction plus adversarial objective for a continuous pair.

    recon is mean absolute error. adv_disc reports the discriminator's
    value log D(x) + log(1 - D(x_rec)), which sits at -2 ln 2 for an
    uninformative discriminator; the discriminator trains on its
    negation and the generator on the non-saturating -log D(x_rec).
    """
    if x_rec.shape != x.shape:
        raise ValueError(f"shape mismatch: {x_rec.shape} vs {x.shape}")
    recon = (x_rec - x).abs().mean()
    real_logits = discriminator(x)
    fake_logits = discriminator(x_rec)
    # disc objective sees a detached fake; its backward must not reach
    # the generator
    disc_total = discriminator_loss(real_logits,
                                    discriminator(stop_gradient(x_rec)))
    adv_gen = generator_loss(fake_logits)
    total = RECON_WEIGHT * recon + adv_weight * adv_gen
    return StageOneLossReport(
        recon_l1=recon.item(),
        adv_gen=adv_gen.item(),
        adv_disc=-disc_total.item(),
        codebook_term=0.0,
        commitment_term=0.0,
        adv_weight=adv_weight,
        total=total,
        disc_total=disc_total,
    )


def vq_ae_loss(x: Tensor, x_rec: Tensor, latent: Tensor,
               q: QuantizationResult, discriminator,
               adv_weight: float = ADV_WEIGHT) -> StageOneLossReport:
    """ae_loss plus the two stop-gradient codebook terms.

    When the latent already equals a codebook row both extra terms are
    zero and this collapses to ae_loss exactly.
    """
    report = ae_loss(x, x_rec, discriminator, adv_weight=adv_weight)
    codebook_term, commitment_term = vq_losses(latent, q)
    total = (report.total
             + CODEBOOK_WEIGHT * codebook_term
             + COMMITMENT_WEIGHT * commitment_term)
    return StageOneLossReport(
        recon_l1=report.recon_l1,
        adv_gen=report.adv_gen,
        adv_disc=report.adv_disc,
        codebook_term=codebook_term.item(),
        commitment_term=commitment_term.item(),
        adv_weight=adv_weight,
        total=total,
        disc_total=report.disc_total,
    )


def pair_loss(pair: AutoencoderPair, x: Tensor,
              adv_weight: float = ADV_WEIGHT):
    """Reconstruct and score one batch; dispatches on the pair's path."""
    x_rec, latent, q = reconstruct(pair, x)
    if q is None:
        report = ae_loss(x, x_rec, pair.discriminator, adv_weight=adv_weight)
    else:
        report = vq_ae_loss(x, x_rec, latent, q, pair.discriminator,
                            adv_weight=adv_weight)
    return x_rec, report


def recompose_total(report: StageOneLossReport) -> float:
    """The documented weighted sum of the reported parts."""
    return (RECON_WEIGHT * report.recon_l1
            + report.adv_weight * report.adv_gen
            + CODEBOOK_WEIGHT * report.codebook_term
            + COMMITMENT_WEIGHT * report.commitment_term)
