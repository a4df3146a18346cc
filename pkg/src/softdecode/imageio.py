"""8-bit grayscale image files (PNG, PGM and anything else Pillow decodes)."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image

IMAGE_SUFFIXES = {".png", ".pgm", ".bmp", ".tif", ".tiff", ".jpg", ".jpeg"}


def list_images(directory: str | os.PathLike) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())


def read_gray(path: str | os.PathLike) -> np.ndarray:
    """Load an image as float64 luminance in [0, 255]; colour input is converted to luma."""
    with Image.open(path) as im:
        im.load()
        if im.mode not in ("L", "I;16", "I", "F"):
            im = im.convert("L")
        arr = np.asarray(im, dtype=np.float64)
    if im.mode in ("I;16", "I"):
        arr = arr / 257.0
    return arr


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(np.asarray(image, dtype=np.float64) + 0.5), 0, 255).astype(np.uint8)


def write_gray(path: str | os.PathLike, image: np.ndarray) -> Path:
    """Write an 8-bit grayscale file atomically (temp file + rename); format follows the suffix."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fmt = "PPM" if path.suffix.lower() == ".pgm" else None
    tmp = path.with_name(f".{path.name}.tmp")
    Image.fromarray(to_uint8(image)).save(tmp, format=fmt or Image.registered_extensions()[path.suffix.lower()])
    os.replace(tmp, path)
    return path
