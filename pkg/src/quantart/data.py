"""Image I/O and data used by training: PNG/JPEG loading into the
[-1, 1] float range, synthetic texture generators for quick runs, and
deterministic batch sampling."""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

from quantart.tensor import Tensor

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


def to_unit_range(arr_u8: np.ndarray) -> np.ndarray:
    """uint8 [0, 255] -> float32 [-1, 1]."""
    return (arr_u8.astype(np.float32) / 127.5) - 1.0


def to_uint8(arr: np.ndarray) -> np.ndarray:
    """float [-1, 1] -> uint8, clipping out-of-range values."""
    clipped = np.clip(arr, -1.0, 1.0)
    return np.round((clipped + 1.0) * 127.5).astype(np.uint8)


def load_image(path, size=None) -> np.ndarray:
    """Read one image as (3, H, W) float32 in [-1, 1].

    ``size`` resizes to (size, size) with bilinear filtering.
    """
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if size is not None:
                im = im.resize((size, size), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.uint8)
    except (OSError, ValueError) as e:
        raise IOError(f"cannot read image {path}: {e}") from e
    return to_unit_range(arr).transpose(2, 0, 1)


def save_image(arr: np.ndarray, path) -> None:
    """Write a (3, H, W) or (1, 3, H, W) array in [-1, 1] as PNG."""
    if arr.ndim == 4:
        if arr.shape[0] != 1:
            raise ValueError(f"expected a single image, got batch {arr.shape}")
        arr = arr[0]
    u8 = to_uint8(arr).transpose(1, 2, 0)
    try:
        Image.fromarray(u8).save(path, format="PNG")
    except OSError as e:
        raise IOError(f"cannot write image {path}: {e}") from e


def image_bytes(arr: np.ndarray) -> bytes:
    """PNG-encode a (3, H, W) [-1, 1] array to bytes."""
    import io

    if arr.ndim == 4:
        arr = arr[0]
    u8 = to_uint8(arr).transpose(1, 2, 0)
    buf = io.BytesIO()
    Image.fromarray(u8).save(buf, format="PNG")
    return buf.getvalue()


def decode_image_bytes(raw: bytes, max_side=4096) -> np.ndarray:
    """Decode PNG/JPEG bytes to (3, H, W) float32 in [-1, 1]."""
    import io

    try:
        with Image.open(io.BytesIO(raw)) as im:
            w, h = im.size
            if not (1 <= w <= max_side and 1 <= h <= max_side):
                raise ValueError(
                    f"image is {w}x{h}; sides must be 1..{max_side}")
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, SyntaxError) as e:
        raise IOError(f"cannot decode image bytes: {e}") from e
    return to_unit_range(arr).transpose(2, 0, 1)


def list_image_files(directory):
    if not os.path.isdir(directory):
        raise IOError(f"dataset directory not found: {directory}")
    files = sorted(
        os.path.join(directory, f) for f in os.listdir(directory)
        if f.lower().endswith(IMAGE_EXTENSIONS))
    if not files:
        raise IOError(f"no images (png/jpg) in {directory}")
    return files


def load_dataset(directory, size) -> np.ndarray:
    """All images of a directory as one (N, 3, size, size) array,
    sorted by filename for reproducibility."""
    files = list_image_files(directory)
    return np.stack([load_image(f, size=size) for f in files])


def synthetic_textures(domain: str, n: int, size: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Procedural (n, 3, size, size) batches in [-1, 1].

    The photo domain gets smooth low-frequency fields; the art domain
    gets hard-edged stripes and checkers with saturated palettes, so
    the two distributions have visibly different channel statistics.
    """
    if domain not in ("photo", "art"):
        raise ValueError(f"unknown domain {domain!r}")
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size),
                         indexing="ij")
    images = np.empty((n, 3, size, size), dtype=np.float32)
    for i in range(n):
        if domain == "photo":
            img = np.empty((3, size, size))
            for c in range(3):
                fx, fy = rng.uniform(0.5, 2.0, size=2)
                phase = rng.uniform(0, 2 * np.pi, size=2)
                img[c] = (0.5 * np.sin(2 * np.pi * fx * xx + phase[0])
                          + 0.5 * np.cos(2 * np.pi * fy * yy + phase[1]))
            cx, cy = rng.uniform(0.2, 0.8, size=2)
            blob = np.exp(-(((xx - cx) ** 2 + (yy - cy) ** 2)
                            / rng.uniform(0.02, 0.1)))
            img += rng.uniform(-0.5, 0.5) * blob
        else:
            freq = rng.integers(2, 6)
            angle = rng.uniform(0, np.pi)
            coord = xx * np.cos(angle) + yy * np.sin(angle)
            stripes = np.sign(np.sin(2 * np.pi * freq * coord))
            if rng.random() < 0.5:
                stripes *= np.sign(
                    np.sin(2 * np.pi * freq * (yy - xx)))  # checker mix
            palette = rng.uniform(-1, 1, size=(3, 2))
            img = np.where(stripes[None] > 0, palette[:, :1, None],
                           palette[:, 1:, None])
            img = img + rng.normal(0, 0.05, size=img.shape)
        images[i] = np.clip(img, -1.0, 1.0)
    return images


def sample_batch(data: np.ndarray, batch_size: int,
                 rng: np.random.Generator, augment: bool = False) -> Tensor:
    """With-replacement batch; optional per-image horizontal flip."""
    if len(data) == 0:
        raise ValueError("dataset is empty")
    idx = rng.integers(0, len(data), size=batch_size)
    x = data[idx].copy()
    if augment:
        flips = rng.random(batch_size) < 0.5
        x[flips] = x[flips, :, :, ::-1]
    return Tensor(x)
