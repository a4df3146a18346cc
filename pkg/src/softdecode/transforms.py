"""Reversible image <-> 4-channel quarter-resolution packings.

Two packings are provided, one per network branch:

* polyphase: the 2x2 pixel lattice is split into four sub-images
  (top-left, top-right, bottom-left, bottom-right sample of every 2x2 cell);
* wavelet: a one-level orthonormal Haar DWT whose sub-bands are stacked in
  the order LL, LH, HL, HH.  ``LH`` is lowpass along rows (horizontal
  direction) and highpass along columns; ``HL`` is the converse.

Both work on a single image ``(m, n)`` or a batch ``(b, m, n)`` and produce
``(b, 4, m/2, n/2)`` tensors.  Each result is tagged with its origin so that
an inverse can never be applied to the wrong packing.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class Origin(str, enum.Enum):
    POLYPHASE = "pixel-polyphase"
    WAVELET = "wavelet-subband"


@dataclass(frozen=True)
class PackedQuad:
    tensor: np.ndarray
    origin: Origin

    @property
    def image_shape(self) -> tuple[int, int]:
        h, w = self.tensor.shape[-2:]
        return 2 * h, 2 * w


def _as_batch(image: np.ndarray) -> tuple[np.ndarray, bool]:
    a = np.asarray(image)
    if a.ndim == 2:
        a, single = a[None], True
    elif a.ndim == 3:
        single = False
    else:
        raise ValueError(f"expected an (m, n) image or (b, m, n) batch, got shape {a.shape}")
    m, n = a.shape[-2:]
    if m % 2 or n % 2 or m == 0 or n == 0:
        raise ValueError(f"image dimensions must be even and non-zero, got {m}x{n}")
    return a, single


def _quads(a: np.ndarray):
    return a[:, 0::2, 0::2], a[:, 0::2, 1::2], a[:, 1::2, 0::2], a[:, 1::2, 1::2]


def _unbatch(out: np.ndarray, squeeze: bool) -> np.ndarray:
    return out[0] if squeeze else out


def _check_origin(packed: PackedQuad, origin: Origin) -> np.ndarray:
    if packed.origin is not origin:
        raise ValueError(f"expected a {origin.value} packing, got {packed.origin.value}")
    t = packed.tensor
    if t.ndim != 4 or t.shape[1] != 4:
        raise ValueError(f"packed tensor must be (b, 4, h, w), got {t.shape}")
    return t


def polyphase_pack(image: np.ndarray) -> PackedQuad:
    a, _ = _as_batch(image)
    return PackedQuad(np.stack(_quads(a), axis=1), Origin.POLYPHASE)


def polyphase_unpack(packed: PackedQuad, squeeze: bool = True) -> np.ndarray:
    """Interleave the four channels back; a batch of one is squeezed to 2-D by default."""
    t = _check_origin(packed, Origin.POLYPHASE)
    b, _, h, w = t.shape
    out = np.empty((b, 2 * h, 2 * w), dtype=t.dtype)
    out[:, 0::2, 0::2] = t[:, 0]
    out[:, 0::2, 1::2] = t[:, 1]
    out[:, 1::2, 0::2] = t[:, 2]
    out[:, 1::2, 1::2] = t[:, 3]
    return _unbatch(out, squeeze and b == 1)


def dwt_pack(image: np.ndarray) -> PackedQuad:
    a, _ = _as_batch(image)
    a = a.astype(np.result_type(a.dtype, np.float64), copy=False)
    p, q, r, s = _quads(a)
    # 2x2 cell [[p, q], [r, s]]; rows (horizontal) filtered first, then columns
    ll = (p + q + r + s) / 2
    lh = (p + q - r - s) / 2
    hl = (p - q + r - s) / 2
    hh = (p - q - r + s) / 2
    return PackedQuad(np.stack((ll, lh, hl, hh), axis=1), Origin.WAVELET)


def dwt_unpack(packed: PackedQuad, squeeze: bool = True) -> np.ndarray:
    t = _check_origin(packed, Origin.WAVELET)
    ll, lh, hl, hh = t[:, 0], t[:, 1], t[:, 2], t[:, 3]
    b, _, h, w = t.shape
    out = np.empty((b, 2 * h, 2 * w), dtype=t.dtype)
    out[:, 0::2, 0::2] = (ll + lh + hl + hh) / 2
    out[:, 0::2, 1::2] = (ll + lh - hl - hh) / 2
    out[:, 1::2, 0::2] = (ll - lh + hl - hh) / 2
    out[:, 1::2, 1::2] = (ll - lh - hl + hh) / 2
    return _unbatch(out, squeeze and b == 1)


PACKERS = {
    Origin.POLYPHASE: (polyphase_pack, polyphase_unpack),
    Origin.WAVELET: (dwt_pack, dwt_unpack),
}
