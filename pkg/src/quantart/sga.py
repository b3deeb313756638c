"""Style-guided attention: feature-level style transfer between the
frozen photo and art latent spaces.

An attention block matches content queries against style keys and adds
the attended style values back onto the query (residual). One transfer
module runs a ResBlock, self-attention, then style cross-attention; the
stack repeats the module M times with the style feature shared. The
quantized variant re-snaps the stack output onto the art codebook so
the downstream decoder only ever sees codebook rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from quantart.nn import (
    Conv2d,
    Module,
    ResBlock,
    discriminator_loss,
    generator_loss,
)
from quantart.quantize import Codebook, QuantizationResult, quantize
from quantart.tensor import Tensor, stop_gradient

CONTENT_WEIGHT = 1.0
STYLE_WEIGHT = 10.0
FEATADV_WEIGHT = 0.8
SGA_CODEBOOK_WEIGHT = 1.0


def _flatten_hw(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, H*W, C) for position-wise attention."""
    b, c, h, w = x.shape
    return x.reshape(b, c, h * w).transpose(0, 2, 1)


class AttentionBlock(Module):
    """Residual attention with learned 1x1 query/key/value embeddings.

    Logits are the raw embedded dot products; the 1/sqrt(d) temperature
    common elsewhere is opt-in via ``scale_logits``.
    """

    def __init__(self, dim, rng, scale_logits=False, dtype=np.float32):
        self.dim = dim
        self.scale_logits = scale_logits
        self.f_q = Conv2d(dim, dim, 1, rng, dtype=dtype)
        self.f_k = Conv2d(dim, dim, 1, rng, dtype=dtype)
        self.f_v = Conv2d(dim, dim, 1, rng, dtype=dtype)

    def forward(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        if not (q.shape[1] == k.shape[1] == v.shape[1] == self.dim):
            raise ValueError(
                f"channel dims {q.shape[1]}/{k.shape[1]}/{v.shape[1]} "
                f"!= attention dim {self.dim}")
        if k.shape[2:] != v.shape[2:]:
            raise ValueError(
                f"key/value spatial sizes differ: {k.shape} vs {v.shape}")
        b, c, h, w = q.shape
        eq = _flatten_hw(self.f_q(q))          # (B, Lq, C)
        ek = _flatten_hw(self.f_k(k))          # (B, Lk, C)
        ev = _flatten_hw(self.f_v(v))          # (B, Lk, C)
        logits = eq @ ek.transpose(0, 2, 1)    # (B, Lq, Lk)
        if self.scale_logits:
            logits = logits * (1.0 / math.sqrt(self.dim))
        weights = logits.softmax(axis=-1)
        out = weights @ ev                     # (B, Lq, C)
        return out.transpose(0, 2, 1).reshape(b, c, h, w) + q

    def attention_weights(self, q: Tensor, k: Tensor) -> np.ndarray:
        """Softmax weights only; diagnostic view."""
        eq = _flatten_hw(self.f_q(q))
        ek = _flatten_hw(self.f_k(k))
        logits = eq @ ek.transpose(0, 2, 1)
        if self.scale_logits:
            logits = logits * (1.0 / math.sqrt(self.dim))
        return logits.softmax(axis=-1).data


class SGAModule(Module):
    """ResBlock, self-attention, then style cross-attention.

    ``use_self_attn`` / ``use_resblock`` switch off the corresponding
    stage for ablation runs.
    """

    def __init__(self, dim, rng, scale_logits=False, use_self_attn=True,
                 use_resblock=True, dtype=np.float32):
        self.dim = dim
        self.use_self_attn = use_self_attn
        self.use_resblock = use_resblock
        self.resblock = (ResBlock(dim, dim, rng, dtype=dtype)
                         if use_resblock else None)
        self.self_attn = (AttentionBlock(dim, rng, scale_logits, dtype)
                          if use_self_attn else None)
        self.cross_attn = AttentionBlock(dim, rng, scale_logits, dtype)

    def forward(self, z_c: Tensor, z_s: Tensor, mode="cross") -> Tensor:
        h = self.resblock(z_c) if self.use_resblock else z_c
        if self.use_self_attn:
            h = self.self_attn(h, h, h)
        if mode == "self_only":
            # art-to-photo direction: no style feature enters; the second
            # block attends over the content itself
            return self.cross_attn(h, h, h)
        return self.cross_attn(h, z_s, z_s)


class SGAStack(Module):
    """M transfer modules applied in sequence, one shared style feature."""

    MODES = ("cross", "self_only")

    def __init__(self, dim, depth, rng, mode="cross", scale_logits=False,
                 use_self_attn=True, use_resblock=True, dtype=np.float32):
        if depth < 1:
            raise ValueError(f"stack depth must be >= 1, got {depth}")
        if mode not in self.MODES:
            raise ValueError(f"unknown mode {mode!r}")
        self.dim = dim
        self.depth = depth
        self.mode = mode
        self.modules = [
            SGAModule(dim, rng, scale_logits, use_self_attn, use_resblock,
                      dtype)
            for _ in range(depth)
        ]

    def forward(self, z_c: Tensor, z_s: Tensor) -> Tensor:
        h = z_c
        for mod in self.modules:
            h = mod(h, z_s, mode=self.mode)
        return h


def channel_stats(z: Tensor, eps=1e-6):
    """Per-channel mean and population std over the spatial axes.

    Returns two (B, C) tensors. eps sits inside the square root so the
    gradient stays finite on constant channels.
    """
    mu = z.mean(axis=(2, 3))
    centered = z - z.mean(axis=(2, 3), keepdims=True)
    var = (centered * centered).mean(axis=(2, 3))
    sigma = (var + eps).sqrt()
    return mu, sigma


def style_statistics_loss(z_y: Tensor, z_s: Tensor) -> Tensor:
    """L2 distance of channel means plus channel stds, batch-averaged."""
    mu_y, sig_y = channel_stats(z_y)
    mu_s, sig_s = channel_stats(z_s)
    mu_diff = mu_y - mu_s
    sig_diff = sig_y - sig_s
    mu_norm = (mu_diff * mu_diff).sum(axis=1).sqrt()
    sig_norm = (sig_diff * sig_diff).sum(axis=1).sqrt()
    return (mu_norm + sig_norm).mean()


@dataclass
class SGALossReport:
    content: float
    style: float
    featadv_gen: float
    featadv_disc: float
    codebook: float             # re-quantization pull; zero on the continuous path
    adv_weight: float
    total: Tensor               # differentiable stack-side objective
    disc_total: Tensor          # differentiable feature-discriminator objective

    def parts(self):
        return {
            "content": self.content,
            "style": self.style,
            "featadv_gen": self.featadv_gen,
            "featadv_disc": self.featadv_disc,
            "codebook": self.codebook,
        }


def sga_losses(z_y: Tensor, z_c: Tensor, z_s: Tensor, feat_disc,
               adv_weight: float = FEATADV_WEIGHT) -> SGALossReport:
    """Content preservation, style-statistics matching, and the feature
    adversarial term.

    featadv_disc reports log D(z_s) + log(1 - D(z_y)); the discriminator
    minimizes its negation, the stack the non-saturating -log D(z_y).
    """
    if z_y.shape != z_c.shape:
        raise ValueError(f"shape mismatch: {z_y.shape} vs {z_c.shape}")
    if z_y.shape[1] != z_s.shape[1]:
        raise ValueError(
            f"channel dims differ: {z_y.shape[1]} vs {z_s.shape[1]}")
    diff = z_y - z_c
    content = (diff * diff).mean()
    style = style_statistics_loss(z_y, z_s)
    real_logits = feat_disc(z_s)
    fake_logits = feat_disc(z_y)
    disc_total = discriminator_loss(real_logits,
                                    feat_disc(stop_gradient(z_y)))
    adv_gen = generator_loss(fake_logits)
    total = (CONTENT_WEIGHT * content + STYLE_WEIGHT * style
             + adv_weight * adv_gen)
    return SGALossReport(
        content=content.item(),
        style=style.item(),
        featadv_gen=adv_gen.item(),
        featadv_disc=-disc_total.item(),
        codebook=0.0,
        adv_weight=adv_weight,
        total=total,
        disc_total=disc_total,
    )


def sga_quantized_forward(stack: SGAStack, z_c_hat: Tensor, z_s_hat: Tensor,
                          cb_art: Codebook):
    """Run the stack, then snap the result onto the art codebook.

    Returns (quantization, pre_quant); the straight-through view inside
    the quantization result is the decoder-facing output.
    """
    pre_quant = stack(z_c_hat, z_s_hat)
    return quantize(pre_quant, cb_art), pre_quant


def sga_hat_loss(q: QuantizationResult, pre_quant: Tensor, z_c_hat: Tensor,
                 z_s_hat: Tensor, feat_disc,
                 adv_weight: float = FEATADV_WEIGHT) -> SGALossReport:
    """Quantized-path objective: the continuous terms evaluated on the
    straight-through output, plus a commitment of the stack output
    toward its assigned codebook rows (entries held constant)."""
    report = sga_losses(q.with_straight_through, z_c_hat, z_s_hat, feat_disc,
                        adv_weight=adv_weight)
    pull = stop_gradient(q.quantized) - pre_quant
    codebook = (pull * pull).mean()
    total = report.total + SGA_CODEBOOK_WEIGHT * codebook
    return SGALossReport(
        content=report.content,
        style=report.style,
        featadv_gen=report.featadv_gen,
        featadv_disc=report.featadv_disc,
        codebook=codebook.item(),
        adv_weight=adv_weight,
        total=total,
        disc_total=report.disc_total,
    )


def recompose_sga_total(report: SGALossReport) -> float:
    """The documented weighted sum of the reported parts."""
    return (CONTENT_WEIGHT * report.content
            + STYLE_WEIGHT * report.style
            + report.adv_weight * report.featadv_gen
            + SGA_CODEBOOK_WEIGHT * report.codebook)
