"""Rank-4 tensor layers with hand-derived backward passes.

Tensors are plain numpy arrays laid out as (batch, channels, height, width).
Only the four layer types the soft-decoding networks need are provided:
3x3 same-size convolution, batch normalization, ReLU and the half-MSE loss,
plus momentum SGD with weight decay.

The convolution works on a zero-padded, channel-major, flattened copy of the
input.  In that layout every one of the nine kernel taps is a constant offset
into the flat plane, so the forward pass is nine contiguous GEMMs and the
backward pass is nine GEMMs plus nine shifted accumulations.  Positions that
land in the padding columns are computed and thrown away.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

KERNEL = 3


class ShapeError(ValueError):
    """Raised when tensor shapes do not fit an operation."""


class NonFiniteGradientError(FloatingPointError):
    """Raised by :func:`sgd_step` when a gradient holds NaN or Inf."""

    def __init__(self, layer_index: int, name: str):
        super().__init__(f"non-finite gradient in layer {layer_index} ({name})")
        self.layer_index = layer_index
        self.name = name


def check_planes(x: np.ndarray, name: str = "input") -> np.ndarray:
    if not isinstance(x, np.ndarray) or x.ndim != 4 or min(x.shape) < 1:
        shape = getattr(x, "shape", None)
        raise ShapeError(f"{name} must be a non-empty (n, c, h, w) array, got shape {shape}")
    return x


@dataclass
class ConvLayer:
    """3x3 convolution with zero padding 1; ``bias`` is None for layers feeding BN."""

    weight: np.ndarray
    bias: np.ndarray | None = None
    decayed = ("weight",)

    def __post_init__(self):
        if self.weight.ndim != 4 or self.weight.shape[2:] != (KERNEL, KERNEL):
            raise ShapeError(f"conv weight must be (k, c, 3, 3), got {self.weight.shape}")
        if self.bias is not None and self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match {self.weight.shape[0]} kernels")

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        p = {"weight": self.weight}
        if self.bias is not None:
            p["bias"] = self.bias
        return p


@dataclass
class BatchNormLayer:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1
    training: bool = True
    decayed = ()

    @classmethod
    def create(cls, channels: int, dtype=np.float64) -> "BatchNormLayer":
        return cls(
            gamma=np.ones(channels, dtype),
            beta=np.zeros(channels, dtype),
            running_mean=np.zeros(channels, dtype),
            running_var=np.ones(channels, dtype),
        )

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"gamma": self.gamma, "beta": self.beta}


@dataclass
class BatchNormCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray
    training: bool
    channel_major: bool = False


def _to_cm(x: np.ndarray, channel_major: bool) -> np.ndarray:
    # view of x in (c, n, h, w) order
    return x if channel_major else x.transpose(1, 0, 2, 3)


def _from_cm(x: np.ndarray, channel_major: bool) -> np.ndarray:
    return x if channel_major else np.ascontiguousarray(x.transpose(1, 0, 2, 3))


_scratch = threading.local()


def _workspace(tag: str, shape: tuple, dtype) -> np.ndarray:
    """Per-thread reusable zero-initialised buffer.

    Callers only ever write the interior of padded buffers, so the padding
    stays zero across reuse.  Large fresh allocations are page-faulted on
    every call otherwise, which costs ~10% of a training step.
    """
    cache = getattr(_scratch, "buffers", None)
    if cache is None:
        cache = _scratch.buffers = {}
    key = (tag, shape, np.dtype(dtype).str)
    buf = cache.get(key)
    if buf is None:
        if len(cache) > 64:
            cache.clear()
        buf = cache[key] = np.zeros(shape, dtype=dtype)
    return buf


def _pad_flat(x_cm: np.ndarray, tag: str = "x") -> np.ndarray:
    # (c, n, h, w) -> (c, n * (h + 3) * (w + 2)); one spare bottom row keeps
    # the largest tap offset inside each sample's plane.
    c, n, h, w = x_cm.shape
    xp = _workspace(tag, (c, n, h + 3, w + 2), x_cm.dtype)
    xp[:, :, 1 : h + 1, 1 : w + 1] = x_cm
    return xp.reshape(c, -1)


def _tap_offsets(w: int) -> list[int]:
    return [dy * (w + 2) + dx for dy in range(KERNEL) for dx in range(KERNEL)]


def _weight_taps(weight: np.ndarray, dtype) -> np.ndarray:
    # (k, c, 3, 3) -> contiguous (9, k, c); strided tap slices fall off the BLAS path
    k, c = weight.shape[:2]
    return np.ascontiguousarray(weight.astype(dtype, copy=False).transpose(2, 3, 0, 1)).reshape(KERNEL * KERNEL, k, c)


def _span(n: int, h: int, w: int) -> int:
    # number of flat output positions that must be evaluated
    return n * (h + 3) * (w + 2) - 2 * (w + 2) - 2


def _dims(x: np.ndarray, channel_major: bool) -> tuple[int, int, int, int]:
    """(n, c, h, w) regardless of layout."""
    check_planes(x)
    if channel_major:
        c, n, h, w = x.shape
        return n, c, h, w
    return x.shape


def conv2d_forward(x: np.ndarray, layer: ConvLayer, channel_major: bool = False) -> np.ndarray:
    """Same-size 3x3 convolution.

    With ``channel_major`` the input and output are laid out (c, n, h, w);
    the networks keep activations that way to avoid transposes.
    """
    n, c, h, w = _dims(x, channel_major)
    if c != layer.in_channels:
        raise ShapeError(f"input shape {x.shape} does not match conv weight shape {layer.weight.shape}")
    k = layer.out_channels
    dtype = np.result_type(x, layer.weight)
    xf = _pad_flat(_to_cm(x, channel_major).astype(dtype, copy=False))
    taps = _weight_taps(layer.weight, dtype)
    m = _span(n, h, w)
    full = _workspace("out", (k, xf.shape[1]), dtype)
    acc = full[:, :m]
    buf = _workspace("tap", (k, m), dtype)
    for t, off in enumerate(_tap_offsets(w)):
        if t == 0:
            np.matmul(taps[t], xf[:, off : off + m], out=acc)
        else:
            np.matmul(taps[t], xf[:, off : off + m], out=buf)
            acc += buf
    out = np.ascontiguousarray(full.reshape(k, n, h + 3, w + 2)[:, :, :h, :w])
    if layer.bias is not None:
        out += layer.bias.astype(dtype, copy=False)[:, None, None, None]
    return _from_cm(out, channel_major)


def conv2d_backward(x: np.ndarray, layer: ConvLayer, grad_out: np.ndarray, input_grad: bool = True,
                    channel_major: bool = False):
    """Return ``(grad_input, grad_weight, grad_bias)``.

    ``grad_bias`` is None for a bias-free layer; ``grad_input`` is None when
    ``input_grad`` is false (first layer of a network).
    """
    n, c, h, w = _dims(x, channel_major)
    k = layer.out_channels
    if c != layer.in_channels:
        raise ShapeError(f"input shape {x.shape} does not match conv weight shape {layer.weight.shape}")
    if _dims(grad_out, channel_major) != (n, k, h, w):
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output shape "
                         f"{(k, n, h, w) if channel_major else (n, k, h, w)}")
    dtype = np.result_type(x, layer.weight, grad_out)
    xf = _pad_flat(_to_cm(x, channel_major).astype(dtype, copy=False))
    m = _span(n, h, w)
    gp = _workspace("grad", (k, n, h + 3, w + 2), dtype)
    g_cm = _to_cm(grad_out, channel_major)
    gp[:, :, :h, :w] = g_cm
    g = gp.reshape(k, -1)[:, :m]

    offsets = _tap_offsets(w)
    grad_taps = np.empty((KERNEL * KERNEL, k, c), dtype=dtype)
    for t, off in enumerate(offsets):
        np.matmul(g, xf[:, off : off + m].T, out=grad_taps[t])
    grad_weight = np.ascontiguousarray(grad_taps.reshape(KERNEL, KERNEL, k, c).transpose(2, 3, 0, 1))
    grad_bias = g_cm.reshape(k, -1).sum(axis=1) if layer.bias is not None else None
    if not input_grad:
        return None, grad_weight, grad_bias

    taps_t = np.ascontiguousarray(_weight_taps(layer.weight, dtype).transpose(0, 2, 1))
    gx = _workspace("grad_in", (c, xf.shape[1]), dtype)
    gx.fill(0)
    buf = _workspace("tap", (c, m), dtype)
    for t, off in enumerate(offsets):
        np.matmul(taps_t[t], g, out=buf)
        gx[:, off : off + m] += buf
    grad_input = np.ascontiguousarray(gx.reshape(c, n, h + 3, w + 2)[:, :, 1 : h + 1, 1 : w + 1])
    return _from_cm(grad_input, channel_major), grad_weight, grad_bias


def _channel_mean(x_cm: np.ndarray) -> np.ndarray:
    return x_cm.reshape(x_cm.shape[0], -1).mean(axis=1)


def batchnorm_forward(x: np.ndarray, layer: BatchNormLayer, channel_major: bool = False):
    """Normalize per channel; in training mode also update the running statistics.

    The running variance is fed the unbiased batch variance.
    """
    n, c, h, w = _dims(x, channel_major)
    if c != layer.channels:
        raise ShapeError(f"input shape {x.shape} does not match {layer.channels} BN channels")
    xc = np.ascontiguousarray(_to_cm(x, channel_major))
    bcast = (slice(None), None, None, None)
    if layer.training:
        count = n * h * w
        if count < 2:
            raise ValueError("batch norm in training mode needs at least 2 values per channel")
        mean = _channel_mean(xc)
        centered = xc - mean[bcast]
        var = _channel_mean(centered * centered)
        inv_std = 1.0 / np.sqrt(var + layer.eps)
        xhat = centered
        xhat *= inv_std[bcast]
        mom = layer.momentum
        layer.running_mean[:] = (1 - mom) * layer.running_mean + mom * mean
        layer.running_var[:] = (1 - mom) * layer.running_var + mom * var * (count / (count - 1))
    else:
        inv_std = 1.0 / np.sqrt(layer.running_var + layer.eps)
        xhat = (xc - layer.running_mean[bcast]) * inv_std[bcast]
    out = xhat * layer.gamma[bcast] + layer.beta[bcast]
    cache = BatchNormCache(xhat, inv_std, layer.gamma.copy(), layer.training, channel_major)
    return _from_cm(out, channel_major), cache


def batchnorm_backward(cache: BatchNormCache, grad_out: np.ndarray):
    """Return ``(grad_input, grad_gamma, grad_beta)`` for a training-mode forward."""
    if not cache.training:
        raise ValueError("batchnorm_backward needs a cache from a training-mode forward")
    g = np.ascontiguousarray(_to_cm(grad_out, cache.channel_major))
    if g.shape != cache.xhat.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match the cached forward")
    c = g.shape[0]
    g2 = g.reshape(c, -1)
    xhat2 = cache.xhat.reshape(c, -1)
    count = g2.shape[1]
    grad_beta = g2.sum(axis=1)
    grad_gamma = np.einsum("ij,ij->i", g2, xhat2)
    # dx = gamma * inv_std * (g - mean(g) - xhat * mean(g * xhat))
    grad_input = xhat2 * (grad_gamma / count)[:, None]
    np.subtract(g2, grad_input, out=grad_input)
    grad_input -= (grad_beta / count)[:, None]
    grad_input *= (cache.gamma * cache.inv_std)[:, None]
    return _from_cm(grad_input.reshape(g.shape), cache.channel_major), grad_gamma, grad_beta


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is 0
    if x.shape != grad_out.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != input shape {x.shape}")
    return grad_out * (x > 0)


def half_mse_loss(prediction: np.ndarray, target: np.ndarray):
    """Half the batch-mean of the per-sample squared error.

    ``loss = sum((prediction - target) ** 2) / (2 * N)`` with N the batch size;
    returns ``(loss, grad_prediction)``.
    """
    if prediction.shape != target.shape:
        raise ShapeError(f"prediction shape {prediction.shape} != target shape {target.shape}")
    batch = prediction.shape[0]
    diff = prediction - target
    loss = float(np.sum(np.square(diff, dtype=np.float64))) / (2.0 * batch)
    return loss, diff / batch


@dataclass
class OptimizerState:
    """Momentum buffers plus the SGD hyperparameters."""

    learning_rate: float
    momentum: float = 0.9
    weight_decay: float = 1e-4
    velocity: list[dict[str, np.ndarray]] = field(default_factory=list)


def sgd_step(layers, grads: list[dict[str, np.ndarray]], state: OptimizerState) -> None:
    """Apply one momentum-SGD update in place.

    ``v <- momentum * v - lr * (grad + decay * param)``, ``param <- param + v``.
    Decay only touches names listed in a layer's ``decayed`` attribute
    (convolution weights).  All gradients are validated before anything changes.
    """
    if len(grads) != len(layers):
        raise ShapeError(f"{len(grads)} gradient entries for {len(layers)} layers")
    if not state.velocity:
        state.velocity = [{k: np.zeros_like(p) for k, p in layer.params().items()} for layer in layers]
    for i, (layer, g) in enumerate(zip(layers, grads)):
        params = layer.params()
        if set(g) != set(params) or set(state.velocity[i]) != set(params):
            raise ShapeError(f"layer {i}: gradient names {sorted(g)} do not match parameters {sorted(params)}")
        for name, p in params.items():
            if g[name].shape != p.shape or state.velocity[i][name].shape != p.shape:
                raise ShapeError(f"layer {i} {name}: gradient {g[name].shape} vs parameter {p.shape}")
            if not np.all(np.isfinite(g[name])):
                raise NonFiniteGradientError(i, name)
    lr, mom, decay = state.learning_rate, state.momentum, state.weight_decay
    for layer, g, vel in zip(layers, grads, state.velocity):
        for name, p in layer.params().items():
            step = g[name] + decay * p if name in layer.decayed else g[name]
            v = vel[name]
            v *= mom
            v -= lr * step
            p += v
