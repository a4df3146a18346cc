"""Small natural-image corpus for desk-scale runs, taken from scikit-image's bundled samples."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .imageio import write_gray

TRAIN_IMAGES = (
    "astronaut", "coffee", "coins", "rocket", "clock", "moon", "brick", "grass", "gravel",
    "immunohistochemistry", "hubble_deep_field", "retina", "page",
)
VAL_IMAGES = ("camera", "chelsea")
MAX_SIDE = 512


def _luma(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    if a.dtype == bool:
        a = a.astype(np.float64) * 255
    a = a.astype(np.float64)
    if a.ndim == 3:
        a = a[..., :3] @ np.array([0.299, 0.587, 0.114])
    if a.max() <= 1.0:
        a = a * 255
    return a


def sample_image(name: str, max_side: int = MAX_SIDE) -> np.ndarray:
    """A bundled sample as 8-bit-valued luma, centre-cropped to at most ``max_side`` with sides a multiple of 8."""
    import skimage.data

    img = np.floor(_luma(getattr(skimage.data, name)()) + 0.5).clip(0, 255)
    m, n = img.shape
    tm = min(m, max_side) // 8 * 8
    tn = min(n, max_side) // 8 * 8
    top, left = (m - tm) // 2, (n - tn) // 2
    return img[top : top + tm, left : left + tn]


def write_desk_corpus(out_dir: str | os.PathLike) -> tuple[Path, Path]:
    """Write ``train/`` and ``val/`` PNG folders; returns both paths."""
    out_dir = Path(out_dir)
    train, val = out_dir / "train", out_dir / "val"
    for folder, names in ((train, TRAIN_IMAGES), (val, VAL_IMAGES)):
        for name in names:
            write_gray(folder / f"{name}.png", sample_image(name))
    return train, val
