"""Quality metrics over a frozen feature backbone.

Three axes: Gram-matrix statistics for style, normalized feature
distance for content, and a Gaussian Fréchet distance for realism,
composed into the (1 + content)(1 + realism) headline number. The
backbone is a frozen copy of the trained quantized art encoder rather
than any pretrained classifier, so absolute values are only comparable
between runs of this codebase - orderings and the composition formula
are what carry over.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass

import numpy as np

from quantart.nn import Encoder
from quantart.tensor import Tensor, no_grad


class FeatureBackbone:
    """Frozen encoder with per-level feature taps."""

    def __init__(self, encoder: Encoder):
        self.encoder = copy.deepcopy(encoder)
        self.encoder.freeze()
        h = hashlib.sha256()
        for name, p in self.encoder.named_parameters():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        self.hash = h.hexdigest()

    @classmethod
    def from_bundle(cls, bundle):
        pair = bundle.art_quant if bundle.art_quant is not None \
            else bundle.art_cont
        return cls(pair.encoder)

    def taps(self, images: Tensor) -> list[np.ndarray]:
        """Per-level (B, C, H, W) feature arrays."""
        with no_grad():
            _, taps = self.encoder.forward_taps(images)
        return [t.data for t in taps]

    def embed(self, images: Tensor) -> np.ndarray:
        """(B, D) embedding: spatial mean of the deepest tap."""
        return self.taps(images)[-1].mean(axis=(2, 3))


def _as_batch(x) -> Tensor:
    if isinstance(x, Tensor):
        arr = x.data
    else:
        arr = np.asarray(x, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    return Tensor(arr)


def _gram(tap: np.ndarray) -> np.ndarray:
    """(B, C, H, W) -> (B, C, C), normalized by C*H*W."""
    b, c, h, w = tap.shape
    flat = tap.reshape(b, c, h * w).astype(np.float64)
    return flat @ flat.transpose(0, 2, 1) / float(c * h * w)


def gram_loss(y, s, backbone: FeatureBackbone) -> float:
    """Sum over taps of the squared Frobenius distance between Gram
    matrices, averaged over the batch."""
    y, s = _as_batch(y), _as_batch(s)
    if y.shape[2:] != s.shape[2:]:
        raise ValueError(f"image sizes differ: {y.shape} vs {s.shape}")
    total = 0.0
    for tap_y, tap_s in zip(backbone.taps(y), backbone.taps(s)):
        diff = _gram(tap_y) - _gram(tap_s)
        total += float((diff * diff).sum(axis=(1, 2)).mean())
    return total


def _unit_normalize(tap: np.ndarray, eps=1e-10) -> np.ndarray:
    norm = np.sqrt((tap.astype(np.float64) ** 2).sum(axis=1, keepdims=True))
    return tap / np.maximum(norm, eps)


def perceptual_distance(a, b, backbone: FeatureBackbone) -> float:
    """Sum over taps of the mean squared difference between
    channel-unit-normalized features."""
    a, b = _as_batch(a), _as_batch(b)
    if a.shape[2:] != b.shape[2:]:
        raise ValueError(f"image sizes differ: {a.shape} vs {b.shape}")
    total = 0.0
    for tap_a, tap_b in zip(backbone.taps(a), backbone.taps(b)):
        diff = _unit_normalize(tap_a) - _unit_normalize(tap_b)
        total += float((diff * diff).mean())
    return total


@dataclass
class GaussianMoments:
    mean: np.ndarray            # (D,)
    cov: np.ndarray             # (D, D), symmetric

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        if self.mean.ndim != 1 or self.cov.shape != (self.mean.size,) * 2:
            raise ValueError(
                f"inconsistent moment shapes: {self.mean.shape} vs "
                f"{self.cov.shape}")
        if not np.allclose(self.cov, self.cov.T, atol=1e-8):
            raise ValueError("covariance must be symmetric")


def moments_from_features(features: np.ndarray) -> GaussianMoments:
    """Sample mean and unbiased covariance of an (n, D) feature set."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError(f"expected (n, D) features, got {features.shape}")
    n, d = features.shape
    if n <= d:
        raise ValueError(
            f"need more samples than dimensions for a usable covariance "
            f"({n} samples, {d} dims)")
    mean = features.mean(axis=0)
    centered = features - mean
    cov = centered.T @ centered / (n - 1)
    cov = 0.5 * (cov + cov.T)
    return GaussianMoments(mean, cov)


def _psd_sqrt(mat: np.ndarray, eig_floor=-1e-6) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition."""
    vals, vecs = np.linalg.eigh(0.5 * (mat + mat.T))
    if vals.min() < eig_floor:
        raise ValueError(
            f"matrix is not PSD: eigenvalue {vals.min():.3e}")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(m1: GaussianMoments, m2: GaussianMoments) -> float:
    """Wasserstein-2 distance between two Gaussians:
    ||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S2^1/2 S1 S2^1/2)^1/2)."""
    if m1.mean.size != m2.mean.size:
        raise ValueError(
            f"dimension mismatch: {m1.mean.size} vs {m2.mean.size}")
    mean_term = float(((m1.mean - m2.mean) ** 2).sum())
    s2_half = _psd_sqrt(m2.cov)
    inner = _psd_sqrt(s2_half @ m1.cov @ s2_half)
    trace_term = float(np.trace(m1.cov) + np.trace(m2.cov)
                       - 2.0 * np.trace(inner))
    # tiny negatives from floating point cancelation
    return max(mean_term + trace_term, 0.0)


def artfid(lpips: float, fid: float) -> float:
    """(1 + content distance) * (1 + realism distance)."""
    if lpips < 0 or fid < 0:
        raise ValueError(
            f"metric inputs must be >= 0, got lpips={lpips}, fid={fid}")
    return (1.0 + lpips) * (1.0 + fid)


def metric_report(metric: str, value: float, n_samples: int,
                  backbone_hash: str) -> str:
    """UTF-8 JSON metric record."""
    return json.dumps(
        {"metric": metric, "value": value, "n_samples": n_samples,
         "backbone_hash": backbone_hash},
        sort_keys=True)
