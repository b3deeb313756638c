"""Learnable codebooks and nearest-entry vector quantization.

A codebook holds the clustered centroids of one domain's latent
distribution. Quantization snaps each spatial latent vector to its
nearest entry (squared L2, ties to the lowest index) and reports three
views: the gathered entries (gradients reach the codebook), the integer
index grid, and a straight-through tensor whose value is the quantized
one but whose backward hands the incoming gradient to the continuous
input unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from quantart.nn import Module
from quantart.tensor import Tensor, gather_rows, stop_gradient


class Codebook(Module):
    """N x d matrix of learnable entries for one domain (photo or art)."""

    def __init__(self, num_entries, dim, rng, domain="art", dtype=np.float32):
        if num_entries < 1 or dim < 1:
            raise ValueError(f"bad codebook shape: {num_entries} x {dim}")
        self.num_entries = num_entries
        self.dim = dim
        self.domain = domain
        init = rng.uniform(-1.0 / num_entries, 1.0 / num_entries,
                           size=(num_entries, dim))
        self.entries = Tensor(init.astype(dtype), requires_grad=True)


@dataclass
class QuantizationResult:
    quantized: Tensor            # (B, d, h, w); rows are exact codebook entries
    indices: np.ndarray          # (B, h, w) int64
    with_straight_through: Tensor  # same values; backward passes grads to z


def nearest_indices(z_flat: np.ndarray, entries: np.ndarray) -> np.ndarray:
    """Argmin of squared L2 distance per row; lowest index wins ties."""
    d2 = (
        (z_flat * z_flat).sum(axis=1, keepdims=True)
        + (entries * entries).sum(axis=1)[None, :]
        - 2.0 * z_flat @ entries.T
    )
    return d2.argmin(axis=1)


def _straight_through(z: Tensor, values: np.ndarray) -> Tensor:
    # Identity Jacobian toward z; the emitted value is exactly `values`.
    def backward(g):
        if z.requires_grad:
            z._accumulate(g)

    return Tensor._result(values, (z,), backward, "straight_through")


def quantize(z: Tensor, cb: Codebook) -> QuantizationResult:
    """Snap each spatial vector of a (B, d, h, w) feature map to the
    nearest codebook entry."""
    if z.ndim != 4:
        raise ValueError(f"expected (B, d, h, w) features, got shape {z.shape}")
    b, d, h, w = z.shape
    if d != cb.dim:
        raise ValueError(f"feature dim {d} != codebook dim {cb.dim}")
    z_flat = np.ascontiguousarray(
        z.data.transpose(0, 2, 3, 1).reshape(-1, d))
    idx = nearest_indices(z_flat, cb.entries.data)

    rows = gather_rows(cb.entries, idx)  # (B*h*w, d), grads -> entries
    quantized = rows.reshape(b, h, w, d).transpose(0, 3, 1, 2)
    st = _straight_through(z, quantized.data)
    return QuantizationResult(
        quantized=quantized,
        indices=idx.reshape(b, h, w),
        with_straight_through=st,
    )


def quantize_with_indices(z: Tensor, cb: Codebook,
                          indices: np.ndarray) -> QuantizationResult:
    """Quantization with the index assignment frozen; used where the
    discrete argmin must not move (finite-difference checks)."""
    b, d, h, w = z.shape
    idx = np.asarray(indices).reshape(-1)
    rows = gather_rows(cb.entries, idx)
    quantized = rows.reshape(b, h, w, d).transpose(0, 3, 1, 2)
    st = _straight_through(z, quantized.data)
    return QuantizationResult(
        quantized=quantized,
        indices=idx.reshape(b, h, w),
        with_straight_through=st,
    )


def vq_losses(z: Tensor, result: QuantizationResult):
    """The two stop-gradient reconstruction terms of the codebook
    objective.

    codebook term   mean ||sg[z] - zq||^2   (moves entries toward z)
    commitment term mean ||sg[zq] - z||^2   (moves the encoder toward zq)
    """
    zq = result.quantized
    if zq.shape != z.shape:
        raise ValueError(f"shape mismatch: {zq.shape} vs {z.shape}")
    codebook_term = ((stop_gradient(z) - zq) ** 2).mean()
    commitment_term = ((stop_gradient(zq) - z) ** 2).mean()
    return codebook_term, commitment_term


def usage_stats(indices: np.ndarray, num_entries: int):
    """Histogram of entry usage and exp-entropy perplexity.

    Perplexity is 1 when a single entry absorbs everything and
    num_entries under uniform use.
    """
    idx = np.asarray(indices).reshape(-1)
    if idx.size == 0:
        raise ValueError("usage_stats needs at least one index")
    if idx.min() < 0 or idx.max() >= num_entries:
        raise ValueError("index out of range for codebook")
    hist = np.bincount(idx, minlength=num_entries)
    p = hist / idx.size
    nz = p[p > 0]
    perplexity = float(np.exp(-(nz * np.log(nz)).sum()))
    return hist, perplexity


def reseed_dead_entries(cb: Codebook, z: Tensor, indices: np.ndarray,
                        rng) -> int:
    """Reinitialize unused entries from random encoder outputs.

    Desk-scale codebooks collapse easily; this keeps dead entries in
    play. Returns the number of reseeded rows.
    """
    hist, _ = usage_stats(indices, cb.num_entries)
    dead = np.flatnonzero(hist == 0)
    if dead.size == 0:
        return 0
    d = cb.dim
    z_flat = z.data.transpose(0, 2, 3, 1).reshape(-1, d)
    picks = rng.integers(0, z_flat.shape[0], size=dead.size)
    entries = cb.entries.data.copy()
    entries[dead] = z_flat[picks]
    cb.entries.data = entries
    return int(dead.size)
