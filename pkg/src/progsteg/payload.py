"""Payload and image plumbing for the steganography pipeline.

Array conventions used throughout the package:

* bit payload -- 1-D ``uint8`` array of 0/1 values,
* secret tensor -- ``float32`` array of shape ``(D, H, W)`` with 0/1 entries,
  where ``D`` is the payload depth in bits per pixel,
* cover / container image -- ``float32`` array of shape ``(3, H, W)`` with
  values in ``[0, 1]``,
* encoder input -- ``float32`` array of shape ``(3 + D, H, W)``: the cover in
  the first three channels, the secret planes after it.

Bits map to the secret tensor in row-major, channel-first order (channel,
then row, then column), so encoding and flattening are exact inverses.
Payload files are raw binary with bits taken most-significant-bit-first
within each byte.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, LengthMismatch, ShapeMismatch

__all__ = [
    "encode_payload",
    "flatten_payload",
    "concat_inputs",
    "load_image",
    "save_image",
    "threshold_bits",
    "random_secret",
    "bytes_to_bits",
    "bits_to_bytes",
]


def encode_payload(bits, d: int, h: int, w: int) -> np.ndarray:
    """Lay a bit sequence out as a ``(d, h, w)`` secret tensor.

    Bits fill the tensor in row-major, channel-first order.  Raises
    :class:`LengthMismatch` unless exactly ``d * h * w`` bits are given.
    """
    if d < 1:
        raise ValueError(f"payload depth must be >= 1, got {d}")
    flat = np.asarray(bits, dtype=np.uint8).ravel()
    if flat.size != d * h * w:
        raise LengthMismatch(
            f"payload has {flat.size} bits but a {d}x{h}x{w} tensor holds {d * h * w}"
        )
    if flat.size and flat.max() > 1:
        raise ValueError("payload bits must be 0 or 1")
    return flat.reshape(d, h, w).astype(np.float32)


def flatten_payload(tensor) -> np.ndarray:
    """Inverse of :func:`encode_payload`: tensor back to a 1-D bit array."""
    t = np.asarray(tensor)
    if t.ndim != 3:
        raise ShapeMismatch(f"secret tensor must be rank 3, got shape {t.shape}")
    return (t.reshape(-1) >= 0.5).astype(np.uint8)


def concat_inputs(cover, secret) -> np.ndarray:
    """Stack cover channels and secret planes into one encoder input."""
    c = np.asarray(cover, dtype=np.float32)
    s = np.asarray(secret, dtype=np.float32)
    if c.ndim != 3 or c.shape[0] != 3:
        raise ShapeMismatch(f"cover must be 3xHxW, got shape {c.shape}")
    if s.ndim != 3:
        raise ShapeMismatch(f"secret must be DxHxW, got shape {s.shape}")
    if c.shape[1:] != s.shape[1:]:
        raise ShapeMismatch(
            f"cover spatial size {c.shape[1:]} != secret spatial size {s.shape[1:]}"
        )
    return np.concatenate([c, s], axis=0)


def load_image(path, target: tuple[int, int] | None = None) -> np.ndarray:
    """Load an RGB raster as a ``(3, h, w)`` float array in ``[0, 1]``.

    ``target`` is an ``(h, w)`` pair; when given, the image is resized with
    bilinear interpolation.  Grayscale and palette images are promoted to
    three channels.  Unreadable paths raise ``OSError``; files that are not
    images raise :class:`DecodeError`.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"image not found: {path}")
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
            if target is not None:
                h, w = target
                img = img.resize((w, h), Image.BILINEAR)
            arr = np.asarray(img, dtype=np.float32) / 255.0
    except UnidentifiedImageError as exc:
        raise DecodeError(f"not a decodable image: {path}") from exc
    return arr.transpose(2, 0, 1)


def save_image(pixels, path) -> None:
    """Write a ``(3, H, W)`` float image in ``[0, 1]`` as an 8-bit PNG."""
    arr = np.asarray(pixels, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ShapeMismatch(f"image must be 3xHxW, got shape {arr.shape}")
    quantized = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(quantized.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")


def threshold_bits(logit_planes) -> np.ndarray:
    """Harden decoder logits into a 0/1 secret tensor.

    A logit of exactly zero (sigmoid 0.5) decodes as 1; the tie-break is
    fixed so extraction is reproducible.
    """
    arr = logit_planes
    if hasattr(arr, "detach"):  # torch tensor
        arr = arr.detach().cpu().numpy()
    arr = np.asarray(arr)
    if arr.ndim != 3:
        raise ShapeMismatch(f"logit planes must be rank 3, got shape {arr.shape}")
    return (arr >= 0.0).astype(np.float32)


def random_secret(d: int, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """Sample a ``(d, h, w)`` secret tensor of i.i.d. Bernoulli(0.5) bits."""
    return rng.integers(0, 2, size=(d, h, w)).astype(np.float32)


def bytes_to_bits(data: bytes) -> np.ndarray:
    """Unpack bytes into bits, most significant bit first."""
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8))


def bits_to_bytes(bits) -> bytes:
    """Pack bits (MSB first) into bytes, zero-padding the final byte."""
    flat = np.asarray(bits, dtype=np.uint8).ravel()
    return np.packbits(flat).tobytes()
