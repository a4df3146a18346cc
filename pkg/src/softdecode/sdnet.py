"""Residual soft-decoding branch networks and their dual-domain fusion.

A branch network is ``D - 1`` blocks of conv(3x3, no bias) + BN + ReLU
followed by one conv(3x3, with bias) emitting four maps.  It predicts the
residual ``clean - compressed`` of a 4-channel packed tensor; the estimate is
the input plus that residual.  The pixel branch works on polyphase packings,
the wavelet branch on Haar sub-band packings.

Images enter the networks in 8-bit units, [0, 255] (``INTENSITY_SCALE`` is
the divisor, kept at 1).  With BN after every hidden conv the hidden layers
learn at a rate proportional to the squared residual magnitude, and at [0, 1]
scale they barely move before the step schedule shrinks the learning rate.

Checkpoint layout (little-endian)::

    offset  size  field
    0       8     magic  b"SDNETCKP"
    8       2     u16 format version (1)
    10      1     u8  branch (0 pixel, 1 wavelet)
    11      1     u8  bytes per value (4 float32, 8 float64)
    12      2     u16 quality factor, 0 for a blind model
    14      2     u16 depth D
    16      2     u16 hidden channels
    18      2     u16 input/output channels
    20      8     u64 training iterations
    28      ...   arrays, in layer order:
                    block i < D: conv weight (k, c, 3, 3), then BN gamma,
                                 beta, running_mean, running_var
                    block D:     conv weight (4, k, 3, 3), conv bias (4)
    end-4   4     u32 CRC-32 of every preceding byte
"""

from __future__ import annotations

import enum
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .transforms import PACKERS, Origin, PackedQuad

INTENSITY_SCALE = 1.0

MAGIC = b"SDNETCKP"
VERSION = 1
_HEADER = struct.Struct("<8sHBBHHHHQ")
_CRC = struct.Struct("<I")


class Branch(str, enum.Enum):
    PIXEL = "pixel"
    WAVELET = "wavelet"

    @property
    def origin(self) -> Origin:
        return Origin.POLYPHASE if self is Branch.PIXEL else Origin.WAVELET


@dataclass(frozen=True)
class NetworkConfig:
    depth: int = 20
    hidden_channels: int = 64
    in_out_channels: int = 4

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError(f"depth must be at least 2, got {self.depth}")
        if self.hidden_channels < 1 or self.in_out_channels < 1:
            raise ValueError("channel counts must be positive")

    def parameter_count(self) -> int:
        """Learnable values: conv weights, final bias and BN gamma/beta."""
        c, k, d = self.in_out_channels, self.hidden_channels, self.depth
        convs = 9 * c * k + (d - 2) * 9 * k * k + 9 * k * c + c
        return convs + 2 * k * (d - 1)


PRESETS = {
    "desk": NetworkConfig(depth=5, hidden_channels=16),
    "paper": NetworkConfig(depth=20, hidden_channels=64),
}


@dataclass
class SDNet:
    """One branch network: an ordered layer stack plus its branch / quality tags."""

    config: NetworkConfig
    branch: Branch
    qf: int | None  # None marks a blind (multi-quality) model
    layers: list = field(default_factory=list)
    iteration: int = 0

    @property
    def dtype(self):
        return self.layers[0].weight.dtype

    def train(self) -> "SDNet":
        for layer in self.layers:
            if isinstance(layer, T.BatchNormLayer):
                layer.training = True
        return self

    def eval(self) -> "SDNet":
        for layer in self.layers:
            if isinstance(layer, T.BatchNormLayer):
                layer.training = False
        return self

    @property
    def training(self) -> bool:
        return any(isinstance(l, T.BatchNormLayer) and l.training for l in self.layers)

    def convs(self) -> list[T.ConvLayer]:
        return [l for l in self.layers if isinstance(l, T.ConvLayer)]

    def batchnorms(self) -> list[T.BatchNormLayer]:
        return [l for l in self.layers if isinstance(l, T.BatchNormLayer)]

    def parameter_count(self) -> int:
        return sum(p.size for l in self.layers for p in l.params().values())


def init_model(config: NetworkConfig, branch: Branch | str, qf: int | None = None, seed: int = 0,
               dtype=np.float64) -> SDNet:
    """He-initialised network; identical seeds give identical parameters."""
    branch = Branch(branch)
    rng = np.random.default_rng(seed)
    c, k = config.in_out_channels, config.hidden_channels
    layers: list = []
    fan_in = c
    for _ in range(config.depth - 1):
        std = np.sqrt(2.0 / (9 * fan_in))
        w = (rng.standard_normal((k, fan_in, 3, 3)) * std).astype(dtype)
        layers.append(T.ConvLayer(w))
        layers.append(T.BatchNormLayer.create(k, dtype))
        fan_in = k
    std = np.sqrt(2.0 / (9 * fan_in))
    w = (rng.standard_normal((c, fan_in, 3, 3)) * std).astype(dtype)
    layers.append(T.ConvLayer(w, np.zeros(c, dtype)))
    return SDNet(config, branch, qf, layers)


def _forward(model: SDNet, x: np.ndarray, keep: bool):
    # activations are kept channel-major, (c, n, h, w), between layers
    caches = []
    h = np.ascontiguousarray(x.transpose(1, 0, 2, 3))
    layers = model.layers
    for i in range(0, len(layers) - 1, 2):
        z = T.conv2d_forward(h, layers[i], channel_major=True)
        bn_out, bn_cache = T.batchnorm_forward(z, layers[i + 1], channel_major=True)
        if keep:
            caches.append((h, bn_cache, bn_out))
        h = T.relu_forward(bn_out)
    if keep:
        caches.append((h, None, None))
    out = T.conv2d_forward(h, layers[-1], channel_major=True)
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3)), caches


def forward_residual(model: SDNet, x: np.ndarray, training: bool | None = None):
    """Run the network on a packed ``(n, 4, h, w)`` tensor.

    Returns ``(residual, estimate)`` with ``estimate = x + residual``.
    ``training`` switches BN mode for this call and leaves it switched.
    """
    T.check_planes(x)
    if x.shape[1] != model.config.in_out_channels:
        raise T.ShapeError(f"input has {x.shape[1]} channels, network expects {model.config.in_out_channels}")
    if training is not None:
        model.train() if training else model.eval()
    x = x.astype(model.dtype, copy=False)
    residual, _ = _forward(model, x, keep=False)
    return residual, x + residual


def _backward(model: SDNet, caches, grad: np.ndarray) -> list[dict[str, np.ndarray]]:
    layers = model.layers
    grads: list[dict[str, np.ndarray]] = [{} for _ in layers]
    g = np.ascontiguousarray(grad.transpose(1, 0, 2, 3))
    h, _, _ = caches[-1]
    g, gw, gb = T.conv2d_backward(h, layers[-1], g, input_grad=len(layers) > 1, channel_major=True)
    grads[-1] = {"weight": gw, "bias": gb}
    for i in range(len(layers) - 3, -1, -2):
        h, bn_cache, bn_out = caches[i // 2]
        g = T.relu_backward(bn_out, g)
        g, gg, gbeta = T.batchnorm_backward(bn_cache, g)
        grads[i + 1] = {"gamma": gg, "beta": gbeta}
        g, gw, _ = T.conv2d_backward(h, layers[i], g, input_grad=i > 0, channel_major=True)
        grads[i] = {"weight": gw}
    return grads


def loss_and_gradients(model: SDNet, y: np.ndarray, x: np.ndarray):
    """Training-mode half-MSE of ``f(y) + y`` against ``x`` and its parameter gradients."""
    model.train()
    y = y.astype(model.dtype, copy=False)
    residual, caches = _forward(model, y, keep=True)
    loss, grad = T.half_mse_loss(residual, x.astype(model.dtype, copy=False) - y)
    return loss, _backward(model, caches, grad)


def branch_train_step(model: SDNet, y: np.ndarray, x: np.ndarray, state: T.OptimizerState,
                      domain: Branch | str | None = None) -> float:
    """One SGD step on compressed/clean packed batches; returns the pre-step loss.

    ``domain`` names the packing the batches came from and must match the
    model's branch.
    """
    if domain is not None and Branch(domain) is not model.branch:
        raise ValueError(f"{Branch(domain).value}-domain pairs cannot train a {model.branch.value} model")
    if y.shape != x.shape:
        raise T.ShapeError(f"compressed batch {y.shape} and clean batch {x.shape} differ")
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
        loss, grads = loss_and_gradients(model, y, x)
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite training loss at iteration {model.iteration}")
    T.sgd_step(model.layers, grads, state)
    model.iteration += 1
    return loss


def branch_estimate(model: SDNet, image: np.ndarray) -> np.ndarray:
    """Eval-mode estimate of one image through a single branch, unclamped."""
    pack, unpack = PACKERS[model.branch.origin]
    packed = pack(np.asarray(image, dtype=np.float64) / INTENSITY_SCALE)
    _, est = forward_residual(model, packed.tensor, training=False)
    return unpack(PackedQuad(est.astype(np.float64), packed.origin)) * INTENSITY_SCALE


@dataclass(frozen=True)
class DecodeResult:
    fused: np.ndarray
    pixel: np.ndarray
    wavelet: np.ndarray


def soft_decode(pixel_model: SDNet, wavelet_model: SDNet, image: np.ndarray) -> DecodeResult:
    """Average the two branch estimates; only the fused image is clamped to [0, 255]."""
    if pixel_model.branch is not Branch.PIXEL or wavelet_model.branch is not Branch.WAVELET:
        raise ValueError(
            f"expected (pixel, wavelet) models, got ({pixel_model.branch.value}, {wavelet_model.branch.value})"
        )
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.shape[0] % 2 or image.shape[1] % 2:
        raise ValueError(f"soft decoding needs a 2-D image with even height and width, got {image.shape}")
    p = branch_estimate(pixel_model, image)
    w = branch_estimate(wavelet_model, image)
    fused = np.clip(0.5 * p + 0.5 * w, 0.0, 255.0)
    return DecodeResult(fused, p, w)


class CheckpointError(ValueError):
    pass


def _arrays(model: SDNet) -> list[np.ndarray]:
    out = []
    for layer in model.layers:
        if isinstance(layer, T.ConvLayer):
            out.append(layer.weight)
            if layer.bias is not None:
                out.append(layer.bias)
        else:
            out.extend([layer.gamma, layer.beta, layer.running_mean, layer.running_var])
    return out


def checkpoint_size(config: NetworkConfig, itemsize: int) -> int:
    k, c, d = config.hidden_channels, config.in_out_channels, config.depth
    values = config.parameter_count() + 2 * k * (d - 1)  # + BN running statistics
    return _HEADER.size + itemsize * values + _CRC.size


def checkpoint_bytes(model: SDNet) -> bytes:
    cfg = model.config
    dtype = np.dtype(model.dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise CheckpointError(f"unsupported parameter dtype {dtype}")
    header = _HEADER.pack(
        MAGIC, VERSION, 0 if model.branch is Branch.PIXEL else 1, dtype.itemsize,
        model.qf or 0, cfg.depth, cfg.hidden_channels, cfg.in_out_channels, model.iteration,
    )
    le = dtype.newbyteorder("<")
    body = b"".join(np.ascontiguousarray(a, dtype=le).tobytes() for a in _arrays(model))
    data = header + body
    return data + _CRC.pack(zlib.crc32(data))


def save_checkpoint(model: SDNet, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_bytes(checkpoint_bytes(model))
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | os.PathLike) -> SDNet:
    """Read a checkpoint; the model comes back in eval mode."""
    data = Path(path).read_bytes()
    return checkpoint_from_bytes(data, str(path))


def checkpoint_from_bytes(data: bytes, name: str = "<bytes>") -> SDNet:
    if len(data) < _HEADER.size + _CRC.size:
        raise CheckpointError(f"{name}: truncated at offset {len(data)}, header needs {_HEADER.size} bytes")
    magic, version, branch, itemsize, qf, depth, hidden, io_ch, iteration = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{name}: bad magic {magic!r} at offset 0")
    if version != VERSION:
        raise CheckpointError(f"{name}: unsupported checkpoint version {version} (expected {VERSION})")
    if itemsize not in (4, 8) or branch not in (0, 1):
        raise CheckpointError(f"{name}: corrupt header (branch={branch}, itemsize={itemsize})")
    try:
        cfg = NetworkConfig(depth, hidden, io_ch)
    except ValueError as exc:
        raise CheckpointError(f"{name}: corrupt header: {exc}") from None
    expected = checkpoint_size(cfg, itemsize)
    if len(data) != expected:
        raise CheckpointError(f"{name}: file is {len(data)} bytes, layout needs {expected}; "
                              f"data ends at offset {len(data)}")
    (crc,) = _CRC.unpack_from(data, len(data) - _CRC.size)
    if crc != zlib.crc32(data[: -_CRC.size]):
        raise CheckpointError(f"{name}: checksum mismatch over bytes 0..{len(data) - _CRC.size}")
    dtype = np.dtype("<f4" if itemsize == 4 else "<f8")
    model = init_model(cfg, Branch.PIXEL if branch == 0 else Branch.WAVELET, qf or None,
                       dtype=dtype.newbyteorder("="))
    model.iteration = iteration
    offset = _HEADER.size
    for a in _arrays(model):
        n = a.size * itemsize
        a[...] = np.frombuffer(data, dtype=dtype, count=a.size, offset=offset).reshape(a.shape)
        offset += n
    return model.eval()
