"""JPEG degradation in the quantization domain.

Only the lossy part of baseline JPEG is reproduced: level shift, 8x8
orthonormal DCT-II, quantization with the IJG-scaled luminance table,
dequantization, inverse DCT and conversion back to 8-bit samples.  Entropy
coding is lossless and therefore skipped.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .imageio import list_images, read_gray, write_gray

log = logging.getLogger(__name__)

BLOCK = 8

# ITU-T T.81 Annex K, table K.1 (luminance)
BASE_LUMINANCE_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.int64,
)


def _dct_matrix(size: int = BLOCK) -> np.ndarray:
    k = np.arange(size)[:, None]
    i = np.arange(size)[None, :]
    c = np.cos((2 * i + 1) * k * np.pi / (2 * size)) * np.sqrt(2.0 / size)
    c[0] /= np.sqrt(2.0)
    return c


DCT8 = _dct_matrix()


@dataclass(frozen=True)
class QuantSpec:
    qf: int
    table: np.ndarray


def quality_scale(qf: int) -> int:
    return 5000 // qf if qf < 50 else 200 - 2 * qf


def build_quant_table(qf: int) -> QuantSpec:
    if isinstance(qf, bool) or not isinstance(qf, (int, np.integer)) or not 1 <= qf <= 100:
        raise ValueError(f"quality factor must be an integer in [1, 100], got {qf!r}")
    qf = int(qf)
    table = (BASE_LUMINANCE_TABLE * quality_scale(qf) + 50) // 100
    return QuantSpec(qf, np.clip(table, 1, 255))


def block_dct8(block: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D DCT-II of one 8x8 block, or of a stack ``(..., 8, 8)``."""
    block = np.asarray(block, dtype=np.float64)
    if block.shape[-2:] != (BLOCK, BLOCK):
        raise ValueError(f"expected trailing 8x8 blocks, got shape {block.shape}")
    return DCT8 @ block @ DCT8.T


def block_idct8(coeffs: np.ndarray) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape[-2:] != (BLOCK, BLOCK):
        raise ValueError(f"expected trailing 8x8 blocks, got shape {coeffs.shape}")
    return DCT8.T @ coeffs @ DCT8


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _to_blocks(img: np.ndarray) -> np.ndarray:
    m, n = img.shape
    return img.reshape(m // BLOCK, BLOCK, n // BLOCK, BLOCK).swapaxes(1, 2)


def _from_blocks(blocks: np.ndarray) -> np.ndarray:
    bm, bn = blocks.shape[:2]
    return blocks.swapaxes(1, 2).reshape(bm * BLOCK, bn * BLOCK)


def degrade(image: np.ndarray, spec: QuantSpec | int) -> np.ndarray:
    """Return the decoded JPEG version of ``image`` at the given quality.

    The output holds integer-valued samples in [0, 255] (what an 8-bit
    decoder hands back) as float64.  Non-multiple-of-8 sizes are
    reflect-padded before coding and cropped afterwards.
    """
    if not isinstance(spec, QuantSpec):
        spec = build_quant_table(spec)
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"degrade needs a non-empty 2-D grayscale image, got shape {img.shape}")
    m, n = img.shape
    pm, pn = -m % BLOCK, -n % BLOCK
    if pm or pn:
        img = np.pad(img, ((0, pm), (0, pn)), mode="reflect" if min(m, n) > 1 else "edge")
    coeffs = block_dct8(_to_blocks(img - 128.0))
    q = spec.table.astype(np.float64)
    coeffs = round_half_away(coeffs / q) * q
    out = _from_blocks(block_idct8(coeffs)) + 128.0
    out = np.clip(round_half_away(out), 0.0, 255.0)
    return out[:m, :n]


@dataclass(frozen=True)
class PairEntry:
    clean: Path
    degraded: Path
    qf: int


def read_manifest(path: str | os.PathLike) -> list[PairEntry]:
    """Parse ``clean<TAB>degraded<TAB>qf`` lines; relative paths resolve against the manifest."""
    path = Path(path)
    base = path.parent
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
        clean, degraded, qf = parts
        entries.append(PairEntry(base / clean, base / degraded, int(qf)))
    return entries


def write_manifest(path: str | os.PathLike, entries: Iterable[PairEntry]) -> None:
    path = Path(path)
    base = path.parent.resolve()
    lines = []
    for e in entries:
        clean = os.path.relpath(Path(e.clean).resolve(), base)
        degraded = os.path.relpath(Path(e.degraded).resolve(), base)
        lines.append(f"{clean}\t{degraded}\t{e.qf}\n")
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("".join(lines))
    os.replace(tmp, path)


def make_pair_corpus(
    clean_dir: str | os.PathLike,
    qfs: int | Sequence[int],
    out_dir: str | os.PathLike,
    manifest_name: str = "manifest.tsv",
) -> Path:
    """Degrade every image in ``clean_dir`` and write a pair manifest.

    With a list of quality factors the images are assigned round-robin in
    sorted filename order (blind-model corpora).  Unreadable files are logged
    and skipped.  Returns the manifest path.
    """
    qf_list = [qfs] if isinstance(qfs, (int, np.integer)) else list(qfs)
    if not qf_list:
        raise ValueError("at least one quality factor is required")
    specs = [build_quant_table(q) for q in qf_list]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    entries = []
    for path in list_images(clean_dir):
        try:
            img = read_gray(path)
        except (OSError, ValueError) as exc:
            log.warning("skipping %s: %s", path, exc)
            continue
        spec = specs[len(entries) % len(specs)]
        target = out_dir / f"{path.stem}_qf{spec.qf}.png"
        write_gray(target, degrade(img, spec))
        entries.append(PairEntry(path, target, spec.qf))
    if not entries:
        raise ValueError(f"no readable images in {clean_dir}")
    manifest = out_dir / manifest_name
    write_manifest(manifest, entries)
    return manifest
