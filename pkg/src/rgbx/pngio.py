"""Lossless PNG I/O for [-1, 1] float images and integer class masks.

Images are stored as 8-bit PNG (RGB or grayscale). The generator snaps
pixel values to the same 8-bit grid before writing, so a write/read round
trip reproduces the in-memory floats bit-exactly.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from rgbx.errors import DataError


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round((np.clip(img, -1.0, 1.0) + 1.0) * 0.5 * 255.0).astype(np.uint8)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    return (arr.astype(np.float32) / 255.0) * 2.0 - 1.0


def save_image(path, img: np.ndarray) -> None:
    """Write a (C, H, W) float image in [-1, 1]; C must be 1 or 3."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise DataError(f"expected (1|3, H, W) image, got {img.shape}")
    u8 = to_uint8(img)
    if img.shape[0] == 1:
        pil = Image.fromarray(u8[0], mode="L")
    else:
        pil = Image.fromarray(np.moveaxis(u8, 0, 2), mode="RGB")
    pil.save(path, format="PNG")


def load_image(path, expect_channels: int | None = None) -> np.ndarray:
    """Read a PNG into a (C, H, W) float32 image in [-1, 1]."""
    try:
        pil = Image.open(path)
        pil.load()
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    if pil.mode == "L":
        arr = np.asarray(pil, dtype=np.uint8)[None]
    elif pil.mode in ("RGB", "RGBA", "P", "I;16"):
        arr = np.moveaxis(np.asarray(pil.convert("RGB"), dtype=np.uint8), 2, 0)
    else:
        raise DataError(f"unsupported PNG mode {pil.mode!r} in {path}")
    if expect_channels is not None and arr.shape[0] != expect_channels:
        raise DataError(
            f"{path}: expected {expect_channels} channel(s), got {arr.shape[0]}"
        )
    return from_uint8(arr)


def save_mask(path, mask: np.ndarray) -> None:
    """Write an (H, W) integer class map (class ids < 256)."""
    mask = np.asarray(mask)
    if mask.ndim != 2 or mask.min(initial=0) < 0 or mask.max(initial=0) > 255:
        raise DataError(f"mask must be (H, W) with ids in [0, 255], got {mask.shape}")
    Image.fromarray(mask.astype(np.uint8), mode="L").save(path, format="PNG")


def load_mask(path) -> np.ndarray:
    try:
        pil = Image.open(path)
        pil.load()
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read mask {path}: {exc}") from exc
    if pil.mode != "L":
        pil = pil.convert("L")
    return np.asarray(pil, dtype=np.int64)
