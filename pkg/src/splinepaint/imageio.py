"""PNG image I/O and resizing for float canvases in [0, 1]."""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

from .validation import check_image


def save_image(path: str | os.PathLike, img) -> None:
    """Write an (H, W, 3) float image in [0, 1] as an 8-bit PNG."""
    arr = check_image(img)
    data = np.round(arr * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path, format="PNG")


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Read an image file as an (H, W, 3) float array in [0, 1]."""
    with Image.open(path) as im:
        data = np.asarray(im.convert("RGB"), dtype=np.float64)
    return data / 255.0


def resize_image(img, height: int, width: int) -> np.ndarray:
    """Bilinear resize of an (H, W, 3) float image."""
    arr = check_image(img)
    if arr.shape[:2] == (height, width):
        return arr.copy()
    im = Image.fromarray(np.round(arr * 255.0).astype(np.uint8), mode="RGB")
    out = im.resize((width, height), resample=Image.BILINEAR)
    return np.asarray(out, dtype=np.float64) / 255.0
