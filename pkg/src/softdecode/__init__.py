"""Dual-domain (pixel and wavelet) residual soft decoding of JPEG-compressed grayscale images."""

from .imageio import read_gray, write_gray
from .jpeg import build_quant_table, degrade, make_pair_corpus
from .metrics import MetricsReport, psnr, psnr_b, ssim
from .sdnet import Branch, NetworkConfig, SDNet, init_model, load_checkpoint, save_checkpoint, soft_decode
from .transforms import Origin, PackedQuad, dwt_pack, dwt_unpack, polyphase_pack, polyphase_unpack

__all__ = [
    "Branch", "MetricsReport", "NetworkConfig", "Origin", "PackedQuad", "SDNet",
    "build_quant_table", "degrade", "dwt_pack", "dwt_unpack", "init_model", "load_checkpoint",
    "make_pair_corpus", "polyphase_pack", "polyphase_unpack", "psnr", "psnr_b", "read_gray", "save_checkpoint",
    "soft_decode", "ssim", "write_gray",
]
