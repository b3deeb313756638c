"""Inference-time fusion: mixing the quantized and continuous paths.

Two scalars steer the output. beta mixes stylized features against the
plain content features on each path; alpha then mixes the quantized
path against the continuous one, both for the feature entering the
decoder and for the decoder weights themselves. Endpoint values of
either knob short-circuit to the exact operand so the identities
(alpha, beta) = (0, 0) -> continuous reconstruction and (1, 1) ->
pure codebook rows hold bit-for-bit, not just to rounding.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from quantart.nn import Decoder, Module
from quantart.tensor import Tensor


@dataclass(frozen=True)
class FusionParams:
    alpha: float
    beta: float

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and np.isfinite(v)):
                raise ValueError(f"{name} must be a finite number, got {v!r}")
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


def fuse(p: float, a: Tensor, b: Tensor) -> Tensor:
    """Weighted sum p*a + (1-p)*b; p in {0, 1} returns the operand
    itself so endpoint outputs are exact."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"fusion weight {p} outside [0, 1]")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if p == 0.0:
        return b
    if p == 1.0:
        return a
    return a * p + b * (1.0 - p)


def fuse_features(z_y_hat: Tensor, z_c_hat: Tensor, z_y: Tensor, z_c: Tensor,
                  params: FusionParams) -> Tensor:
    """The nested mix: alpha over (beta over each path)."""
    shapes = {z_y_hat.shape, z_c_hat.shape, z_y.shape, z_c.shape}
    if len(shapes) != 1:
        raise ValueError(f"feature shapes differ: {sorted(shapes)}")
    quant_branch = fuse(params.beta, z_y_hat, z_c_hat)
    cont_branch = fuse(params.beta, z_y, z_c)
    return fuse(params.alpha, quant_branch, cont_branch)


def _fuse_arrays(p: float, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if p == 0.0:
        return b.copy()
    if p == 1.0:
        return a.copy()
    return (p * a.astype(np.float64)
            + (1.0 - p) * b.astype(np.float64)).astype(a.dtype)


def build_fused_decoder(decoder_hat: Decoder, decoder: Decoder,
                        alpha: float) -> Decoder:
    """Per-parameter interpolation of two identically shaped decoders.

    alpha=0 and alpha=1 copy the respective source parameters
    bit-for-bit.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha={alpha} outside [0, 1]")
    named_hat = dict(decoder_hat.named_parameters())
    named = dict(decoder.named_parameters())
    if named_hat.keys() != named.keys():
        missing = sorted(named_hat.keys() ^ named.keys())
        raise ValueError(f"decoder architectures differ at: {missing}")
    fused = copy.deepcopy(decoder)
    for name, p in fused.named_parameters():
        a = named_hat[name].data
        b = named[name].data
        if a.shape != b.shape:
            raise ValueError(
                f"decoder parameter {name} shapes differ: {a.shape} vs {b.shape}")
        p.data = _fuse_arrays(alpha, a, b)
        p.requires_grad = False
    return fused


class OutputBlendDecoder(Module):
    """Alternative reading of decoder fusion: run both decoders and mix
    the images instead of the weights."""

    def __init__(self, decoder_hat: Decoder, decoder: Decoder, alpha: float):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha={alpha} outside [0, 1]")
        self.decoder_hat = decoder_hat
        self.decoder = decoder
        self.alpha = alpha

    def forward(self, z: Tensor) -> Tensor:
        if self.alpha == 0.0:
            return self.decoder(z)
        if self.alpha == 1.0:
            return self.decoder_hat(z)
        return fuse(self.alpha, self.decoder_hat(z), self.decoder(z))


_BUNDLE_PARTS = ("photo_cont", "photo_quant", "art_cont", "art_quant",
                 "sga", "sga_hat")


def _check_bundle(bundle):
    missing = [name for name in _BUNDLE_PARTS
               if getattr(bundle, name, None) is None]
    if missing:
        raise ValueError(f"model bundle is missing: {', '.join(missing)}")


def stylize_features(bundle, content: Tensor, style: Tensor,
                     params: FusionParams) -> dict:
    """Encode, transfer, and fuse; returns every intermediate feature.

    With beta=0 the style branches are never evaluated, which is what
    makes the output structurally independent of the style image.
    """
    from quantart.quantize import quantize
    from quantart.tensor import no_grad

    _check_bundle(bundle)
    with no_grad():
        z_c = bundle.photo_cont.encode(content)
        z_c_hat = quantize(bundle.photo_quant.encode(content),
                           bundle.photo_quant.codebook).quantized
        if params.beta == 0.0:
            z_test = fuse(params.alpha, z_c_hat, z_c)
            return {"z_c": z_c, "z_c_hat": z_c_hat, "z_y": None,
                    "z_y_hat": None, "z_test": z_test}
        z_s = bundle.art_cont.encode(style)
        z_s_hat = quantize(bundle.art_quant.encode(style),
                           bundle.art_quant.codebook).quantized
        z_y = bundle.sga(z_c, z_s)
        z_y_hat = bundle.sga_hat(z_c_hat, z_s_hat)
        if getattr(bundle, "requantize_sga", True):
            z_y_hat = quantize(z_y_hat,
                               bundle.art_quant.codebook).quantized
        z_test = fuse_features(z_y_hat, z_c_hat, z_y, z_c, params)
        return {"z_c": z_c, "z_c_hat": z_c_hat, "z_y": z_y,
                "z_y_hat": z_y_hat, "z_test": z_test}


def stylize(bundle, content: Tensor, style: Tensor, params: FusionParams,
            fuse_outputs: bool = False) -> Tensor:
    """Full inference path: fused features through the fused art decoder.

    ``fuse_outputs`` switches from parameter-space decoder fusion to
    blending the two decoded images.
    """
    from quantart.tensor import no_grad

    feats = stylize_features(bundle, content, style, params)
    with no_grad():
        if fuse_outputs:
            decoder = OutputBlendDecoder(bundle.art_quant.decoder,
                                         bundle.art_cont.decoder,
                                         params.alpha)
        else:
            decoder = build_fused_decoder(bundle.art_quant.decoder,
                                          bundle.art_cont.decoder,
                                          params.alpha)
        return decoder(feats["z_test"])
