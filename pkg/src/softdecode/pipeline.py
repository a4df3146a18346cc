"""Training data preparation, the branch training loop and corpus evaluation."""

from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from . import metrics as M
from . import tensor as T
from .imageio import list_images, read_gray
from .jpeg import PairEntry, degrade, read_manifest
from .sdnet import (
    INTENSITY_SCALE, Branch, NetworkConfig, PRESETS, SDNet, branch_estimate, branch_train_step,
    forward_residual, init_model, load_checkpoint, save_checkpoint, soft_decode,
)
from .transforms import PACKERS, PackedQuad

log = logging.getLogger(__name__)

ROTATIONS = (0, 1, 2, 3)  # quarter turns
SCALES = (1.0, 0.7, 0.5)
MIN_SIDE = 62


@dataclass(frozen=True)
class QfMode:
    """One quality factor (dedicated model) or several (blind model)."""

    qfs: tuple[int, ...]
    blind: bool = False

    def __post_init__(self):
        if not self.qfs:
            raise ValueError("at least one quality factor is required")
        if not self.blind and len(self.qfs) != 1:
            raise ValueError("a dedicated model takes exactly one quality factor")
        for q in self.qfs:
            if not 1 <= q <= 100:
                raise ValueError(f"quality factor must be in [1, 100], got {q}")

    @classmethod
    def dedicated(cls, qf: int) -> "QfMode":
        return cls((int(qf),))

    @classmethod
    def parse(cls, text: str) -> "QfMode":
        """``"10"`` for a dedicated model, ``"blind:10,20,30,40"`` for a blind one."""
        text = str(text).strip()
        blind = text.startswith("blind:")
        body = text.split(":", 1)[1] if blind else text
        try:
            qfs = tuple(int(v) for v in body.split(",") if v.strip())
        except ValueError:
            raise ValueError(f"cannot parse quality factors from {text!r}") from None
        return cls(qfs, blind)

    @property
    def model_qf(self) -> int | None:
        return None if self.blind else self.qfs[0]

    def __str__(self) -> str:
        body = ",".join(map(str, self.qfs))
        return f"blind:{body}" if self.blind else body


@dataclass(frozen=True)
class TrainConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    batch_size: int = 64
    initial_lr: float = 0.1
    lr_decay_factor: float = 10.0
    lr_decay_epochs: int = 10
    max_iterations: int = 300_000
    momentum: float = 0.9
    weight_decay: float = 1e-4
    patch_size: int = 31
    qf_mode: QfMode = field(default_factory=lambda: QfMode.dedicated(10))
    seed: int = 0
    num_patches: int = 523_968
    val_every: int = 100
    max_val_patches: int = 1024
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("batch_size", "lr_decay_epochs", "patch_size", "num_patches", "val_every",
                     "max_val_patches"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.initial_lr <= 0 or self.lr_decay_factor <= 0:
            raise ValueError("learning rate and decay factor must be positive")
        if self.max_iterations < 0:
            raise ValueError(f"max_iterations must be non-negative, got {self.max_iterations}")
        if self.patch_size % 2 == 0:
            raise ValueError(f"patch_size must be odd, got {self.patch_size}")
        if not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ValueError("momentum must be in [0, 1) and weight decay non-negative")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")

    @classmethod
    def preset(cls, name: str, **overrides) -> "TrainConfig":
        return replace(PRESET_CONFIGS[name], **overrides)

    def describe(self) -> list[tuple[str, str]]:
        net = self.network
        rows = [("depth", net.depth), ("hidden_channels", net.hidden_channels)]
        rows += [(k, getattr(self, k)) for k in (
            "batch_size", "initial_lr", "lr_decay_factor", "lr_decay_epochs", "max_iterations",
            "momentum", "weight_decay", "patch_size", "qf_mode", "seed", "num_patches", "val_every",
            "max_val_patches", "dtype")]
        return [(k, str(v)) for k, v in rows]


PRESET_CONFIGS = {
    # Desk-scale substitute for the full run; the LR is tuned for the small network.
    "desk": TrainConfig(network=PRESETS["desk"], initial_lr=1e-4, max_iterations=2000, num_patches=2000),
    "paper": TrainConfig(network=PRESETS["paper"], initial_lr=0.1, max_iterations=300_000,
                         num_patches=523_968, val_every=1000),
}


def iterations_per_epoch(num_pairs: int, batch_size: int) -> int:
    return max(1, math.ceil(num_pairs / batch_size))


def learning_rate(config: TrainConfig, iteration: int, num_pairs: int) -> float:
    """Step schedule: divide by ``lr_decay_factor`` every ``lr_decay_epochs`` epochs of batches."""
    interval = iterations_per_epoch(num_pairs, config.batch_size) * config.lr_decay_epochs
    return config.initial_lr / config.lr_decay_factor ** (iteration // interval)


def _resize(image: np.ndarray, scale: float) -> np.ndarray:
    m, n = image.shape
    tm, tn = int(m * scale) // 2 * 2, int(n * scale) // 2 * 2
    if (tm, tn) == (m, n):
        return image.copy()
    small = Image.fromarray(image.astype(np.float32), mode="F").resize((tn, tm), Image.Resampling.BICUBIC)
    return np.clip(np.floor(np.asarray(small, dtype=np.float64) + 0.5), 0, 255)


def augment(image: np.ndarray) -> list[np.ndarray]:
    """Rotations by 0/90/180/270 degrees crossed with bicubic downscales by 1, 0.7 and 0.5.

    Order is scale-major.  Sides are floored to even, resampled values
    rounded back to 8-bit levels, and variants under 62x62 are dropped.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"augment needs a 2-D image, got shape {image.shape}")
    out = []
    for scale in SCALES:
        if min(int(image.shape[0] * scale), int(image.shape[1] * scale)) < MIN_SIDE:
            continue
        base = _resize(image, scale)
        for k in ROTATIONS:
            out.append(np.rot90(base, k).copy())
    return out


@dataclass(frozen=True)
class PatchPair:
    """Co-located compressed/clean windows of one packed image pair, in [0, 255] units."""

    y_patch: np.ndarray  # (1, 4, p, p) compressed
    x_patch: np.ndarray  # (1, 4, p, p) clean
    domain: Branch
    qf: int
    position: tuple[int, int]  # top-left corner in packed coordinates


def patch_positions(packed_shape: tuple[int, int], patch_size: int, count: int | None = None,
                    stride: int | None = None, seed: int = 0) -> np.ndarray:
    """Top-left corners ``(k, 2)`` of patch windows: a raster grid when ``stride`` is set,
    otherwise ``count`` distinct positions drawn uniformly with ``seed``."""
    h, w = packed_shape
    if min(h, w) < patch_size:
        raise ValueError(f"packed size {h}x{w} is smaller than the {patch_size}x{patch_size} patch")
    if stride is not None:
        if stride <= 0:
            raise ValueError(f"stride must be positive, got {stride}")
        rows, cols = np.arange(0, h - patch_size + 1, stride), np.arange(0, w - patch_size + 1, stride)
        grid = np.stack(np.meshgrid(rows, cols, indexing="ij"), -1).reshape(-1, 2)
        return grid if count is None else grid[:count]
    if count is None:
        raise ValueError("random sampling needs a patch count")
    nw = w - patch_size + 1
    total = (h - patch_size + 1) * nw
    flat = np.random.default_rng(seed).choice(total, size=min(count, total), replace=False)
    return np.stack([flat // nw, flat % nw], -1)


def extract_pairs(clean: np.ndarray, degraded: np.ndarray, domain: Branch | str, count: int | None = None,
                  stride: int | None = None, seed: int = 0, patch_size: int = 31, qf: int = 0) -> list[PatchPair]:
    """Pack both images in ``domain`` and cut co-located windows (grid if ``stride``, else random)."""
    domain = Branch(domain)
    clean = np.asarray(clean, dtype=np.float64)
    degraded = np.asarray(degraded, dtype=np.float64)
    if clean.shape != degraded.shape:
        raise ValueError(f"clean {clean.shape} and degraded {degraded.shape} images differ in size")
    pack = PACKERS[domain.origin][0]
    px, py = pack(clean).tensor, pack(degraded).tensor
    p = patch_size
    out = []
    for r, c in patch_positions(px.shape[2:], p, count, stride, seed):
        out.append(PatchPair(py[:, :, r:r + p, c:c + p].copy(), px[:, :, r:r + p, c:c + p].copy(),
                             domain, qf, (int(r), int(c))))
    return out


@dataclass
class PatchSet:
    """Stacked patch pairs ``(n, 4, p, p)`` in network units plus the qf of each pair."""

    y: np.ndarray
    x: np.ndarray
    qf: np.ndarray

    def __len__(self) -> int:
        return len(self.y)


def _qf_for(mode: QfMode, index: int) -> int:
    return mode.qfs[index % len(mode.qfs)]


def _select_entries(entries: Sequence[PairEntry], mode: QfMode) -> list[PairEntry]:
    if mode.blind:
        return list(entries)
    chosen = [e for e in entries if e.qf == mode.qfs[0]]
    if not chosen:
        raise ValueError(f"manifest has no pairs at quality {mode.qfs[0]}")
    return chosen


def build_training_set(entries: Sequence[PairEntry], domain: Branch | str, config: TrainConfig) -> PatchSet:
    """Augment each clean image, degrade every variant and sample ``num_patches`` pairs.

    Blind mode assigns quality factors round-robin over all variants and
    splits the patch budget evenly across them.
    """
    domain = Branch(domain)
    mode = config.qf_mode
    entries = _select_entries(entries, mode)
    if not entries:
        raise ValueError("training manifest is empty")
    p = config.patch_size
    variants: list[tuple[np.ndarray, np.ndarray, int]] = []  # (clean, degraded) as uint8, qf
    for entry in entries:
        for img in augment(read_gray(entry.clean)):
            if min(img.shape) // 2 < p:
                continue
            qf = _qf_for(mode, len(variants)) if mode.blind else mode.qfs[0]
            variants.append((img.astype(np.uint8), degrade(img, qf).astype(np.uint8), qf))
    if not variants:
        raise ValueError(f"no training image is large enough for {p}x{p} packed patches")

    positions = np.array([(v[0].shape[0] // 2 - p + 1) * (v[0].shape[1] // 2 - p + 1) for v in variants])
    groups = sorted({v[2] for v in variants})
    if mode.blind and set(groups) != set(mode.qfs):
        raise ValueError(f"training pairs cover qualities {groups}, blind mode needs {list(mode.qfs)}")
    rng = np.random.default_rng([config.seed, 1])
    picks = []  # (variant index, flat position)
    for gi, qf in enumerate(groups):
        members = np.array([i for i, v in enumerate(variants) if v[2] == qf])
        want = config.num_patches // len(groups) + (gi < config.num_patches % len(groups))
        cum = np.cumsum(positions[members])
        flat = rng.choice(cum[-1], size=min(want, cum[-1]), replace=False)
        owner = np.searchsorted(cum, flat, side="right")
        start = np.concatenate([[0], cum[:-1]])
        picks += [(members[o], f - start[o]) for o, f in zip(owner, flat)]
    picks.sort()

    dtype = np.dtype(config.dtype)
    n = len(picks)
    ys = np.empty((n, 4, p, p), dtype)
    xs = np.empty((n, 4, p, p), dtype)
    qfs = np.empty(n, np.int64)
    pack = PACKERS[domain.origin][0]
    current, px, py = -1, None, None
    for k, (vi, flat) in enumerate(picks):
        if vi != current:
            clean, deg, _ = variants[vi]
            px = pack(clean.astype(np.float64) / INTENSITY_SCALE).tensor[0]
            py = pack(deg.astype(np.float64) / INTENSITY_SCALE).tensor[0]
            current = vi
        nw = clean.shape[1] // 2 - p + 1
        r, c = divmod(int(flat), nw)
        ys[k] = py[:, r:r + p, c:c + p]
        xs[k] = px[:, r:r + p, c:c + p]
        qfs[k] = variants[vi][2]
    return PatchSet(ys, xs, qfs)


def build_validation_set(entries: Sequence[PairEntry], domain: Branch | str, config: TrainConfig) -> PatchSet:
    """Grid patches (stride = patch size) from unaugmented held-out images."""
    domain = Branch(domain)
    mode = config.qf_mode
    p = config.patch_size
    ys, xs, qfs = [], [], []
    images = [read_gray(e.clean) for e in entries]
    images = [img[: img.shape[0] // 2 * 2, : img.shape[1] // 2 * 2] for img in images]
    for i, img in enumerate(im for im in images if min(im.shape) // 2 >= p):
        qf = _qf_for(mode, i)
        for pair in extract_pairs(img, degrade(img, qf), domain, stride=p, patch_size=p, qf=qf):
            ys.append(pair.y_patch[0])
            xs.append(pair.x_patch[0])
            qfs.append(qf)
    if not ys:
        raise ValueError("no validation image is large enough to cut a patch")
    if len(ys) > config.max_val_patches:
        keep = np.sort(np.random.default_rng([config.seed, 3]).choice(len(ys), config.max_val_patches, replace=False))
        ys, xs, qfs = [ys[k] for k in keep], [xs[k] for k in keep], [qfs[k] for k in keep]
    dtype = np.dtype(config.dtype)
    return PatchSet((np.stack(ys) / INTENSITY_SCALE).astype(dtype), (np.stack(xs) / INTENSITY_SCALE).astype(dtype),
                    np.array(qfs))


def _unpacked_sq_error(est: np.ndarray, clean: np.ndarray, domain: Branch) -> tuple[float, int]:
    unpack = PACKERS[domain.origin][1]
    a = unpack(PackedQuad(est.astype(np.float64), domain.origin), squeeze=False)
    b = unpack(PackedQuad(clean.astype(np.float64), domain.origin), squeeze=False)
    a = np.clip(a * INTENSITY_SCALE, 0.0, 255.0)
    return float(np.sum((a - b * INTENSITY_SCALE) ** 2)), a.size


def patch_psnr(model: SDNet | None, patches: PatchSet, domain: Branch | str, batch_size: int = 64) -> float:
    """PSNR over all patch windows (aggregate MSE in image space); ``model=None`` scores the JPEG input."""
    domain = Branch(domain)
    sq, count = 0.0, 0
    for s in range(0, len(patches), batch_size):
        y = patches.y[s:s + batch_size]
        est = y if model is None else forward_residual(model, y, training=False)[1]
        e, n = _unpacked_sq_error(est, patches.x[s:s + batch_size], domain)
        sq += e
        count += n
    return M.mse_to_psnr(sq / count)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainingResult:
    model: SDNet
    log: list[tuple[int, float, float, float]]  # iter, loss, lr, val_psnr (nan when not measured)
    jpeg_val_psnr: float
    best_val_psnr: float
    final_val_psnr: float
    checkpoint: Path
    best_checkpoint: Path
    log_path: Path
    num_pairs: int

    @property
    def losses(self) -> np.ndarray:
        return np.array([row[1] for row in self.log if row[0] > 0])


def best_checkpoint_path(checkpoint: str | os.PathLike) -> Path:
    checkpoint = Path(checkpoint)
    return checkpoint.with_name(f"{checkpoint.stem}.best{checkpoint.suffix}")


def _snapshot(model: SDNet) -> SDNet:
    layers = []
    for layer in model.layers:
        if isinstance(layer, T.ConvLayer):
            layers.append(T.ConvLayer(layer.weight.copy(), None if layer.bias is None else layer.bias.copy()))
        else:
            layers.append(replace(layer, gamma=layer.gamma.copy(), beta=layer.beta.copy(),
                                  running_mean=layer.running_mean.copy(), running_var=layer.running_var.copy()))
    return replace(model, layers=layers)


def _format_row(row) -> str:
    it, loss, lr, val = row
    return f"{it}\t{loss:.9g}\t{lr:.9g}\t{val:.6f}\n"


def train_branch(
    manifest: str | os.PathLike | Sequence[PairEntry],
    domain: Branch | str,
    config: TrainConfig,
    checkpoint_out: str | os.PathLike,
    val_manifest: str | os.PathLike | Sequence[PairEntry] | None = None,
    log_path: str | os.PathLike | None = None,
    training_set: PatchSet | None = None,
    validation_set: PatchSet | None = None,
) -> TrainingResult:
    """Train one branch with momentum SGD and the step LR schedule.

    Without ``val_manifest`` the last fifth of the images (at least one) is
    held out for validation; with a single image, validation reuses it.
    Writes the final checkpoint to ``checkpoint_out``, the best-validation
    one next to it and a ``iter/loss/lr/val_psnr`` TSV log.
    """
    domain = Branch(domain)
    entries = read_manifest(manifest) if isinstance(manifest, (str, os.PathLike)) else list(manifest)
    if not entries:
        raise ValueError("training manifest is empty")
    if val_manifest is None:
        images = sorted({e.clean for e in entries})
        if len(images) > 1:
            held = set(images[-max(1, len(images) // 5):])
            val_entries = [e for e in entries if e.clean in held]
            entries = [e for e in entries if e.clean not in held]
        else:
            log.warning("only one training image; validating on it")
            val_entries = entries
    else:
        val_entries = read_manifest(val_manifest) if isinstance(val_manifest, (str, os.PathLike)) else list(val_manifest)

    checkpoint_out = Path(checkpoint_out)
    best_out = best_checkpoint_path(checkpoint_out)
    log_path = Path(log_path) if log_path else checkpoint_out.with_suffix(".log.tsv")
    train_set = training_set if training_set is not None else build_training_set(entries, domain, config)
    val_set = validation_set if validation_set is not None else build_validation_set(val_entries, domain, config)

    model = init_model(config.network, domain, config.qf_mode.model_qf, seed=config.seed,
                       dtype=np.dtype(config.dtype))
    state = T.OptimizerState(config.initial_lr, config.momentum, config.weight_decay)
    n = len(train_set)
    per_epoch = iterations_per_epoch(n, config.batch_size)

    jpeg_psnr = patch_psnr(None, val_set, domain)
    val = patch_psnr(model, val_set, domain)
    best_val, good = val, _snapshot(model)
    save_checkpoint(model, best_out)
    rows = [(0, math.nan, learning_rate(config, 0, n), val)]
    log_path.parent.mkdir(parents=True, exist_ok=True)
    with open(log_path, "w") as fh:
        fh.write("iter\tloss\tlr\tval_psnr\n")
        fh.write(_format_row(rows[0]))
        order = np.empty(0, np.int64)
        for it in range(config.max_iterations):
            epoch, slot = divmod(it, per_epoch)
            if slot == 0:
                order = np.random.default_rng([config.seed, 2, epoch]).permutation(n)
            idx = np.sort(order[slot * config.batch_size:(slot + 1) * config.batch_size])
            state.learning_rate = learning_rate(config, it, n)
            try:
                loss = branch_train_step(model, train_set.y[idx], train_set.x[idx], state, domain)
            except (FloatingPointError, T.NonFiniteGradientError) as exc:
                save_checkpoint(good, checkpoint_out)
                fh.write(_format_row((it + 1, math.nan, state.learning_rate, math.nan)))
                raise TrainingDiverged(f"training diverged at iteration {it + 1}: {exc}; "
                                       f"last good model (iteration {good.iteration}) kept in {checkpoint_out}") from exc
            val = math.nan
            if (it + 1) % config.val_every == 0 or it + 1 == config.max_iterations:
                val = patch_psnr(model, val_set, domain)
                if math.isfinite(val):
                    good = _snapshot(model)
                    if val > best_val:
                        best_val = val
                        save_checkpoint(model, best_out)
            row = (it + 1, loss, state.learning_rate, val)
            rows.append(row)
            fh.write(_format_row(row))
            if math.isfinite(val):
                fh.flush()
    model.eval()
    save_checkpoint(model, checkpoint_out)
    final_val = patch_psnr(model, val_set, domain)
    return TrainingResult(model, rows, jpeg_psnr, best_val, final_val, checkpoint_out, best_out, log_path, n)


def read_training_log(path: str | os.PathLike) -> list[tuple[int, float, float, float]]:
    rows = []
    for line in Path(path).read_text().splitlines()[1:]:
        it, loss, lr, val = line.split("\t")
        rows.append((int(it), float(loss), float(lr), float(val)))
    return rows


METHODS = ("jpeg", "pixel", "wavelet", "fused")


@dataclass(frozen=True)
class ImageScore:
    image: str
    qf: int
    method: str
    report: M.MetricsReport


@dataclass
class EvalTable:
    scores: list[ImageScore]
    qfs: tuple[int, ...]
    methods: tuple[str, ...]

    def mean(self, method: str, qf: int) -> M.MetricsReport:
        rows = [s.report for s in self.scores if s.method == method and s.qf == qf]
        if not rows:
            raise KeyError(f"no scores for {method} at quality {qf}")
        return M.MetricsReport(*(float(np.mean([getattr(r, f) for r in rows]))
                                 for f in ("psnr", "ssim", "psnr_b", "elapsed")))

    def summary_tsv(self) -> str:
        """Methods as rows, qualities as columns, cells ``psnr/ssim/psnr_b``."""
        lines = ["method\t" + "\t".join(f"qf{q}" for q in self.qfs)]
        for method in self.methods:
            cells = []
            for q in self.qfs:
                r = self.mean(method, q)
                cells.append(f"{r.psnr:.2f}/{r.ssim:.4f}/{r.psnr_b:.2f}")
            lines.append(method + "\t" + "\t".join(cells))
        return "\n".join(lines) + "\n"

    def per_image_tsv(self) -> str:
        lines = ["image\tqf\tmethod\tpsnr\tssim\tpsnr_b\tseconds"]
        for s in self.scores:
            r = s.report
            lines.append(f"{s.image}\t{s.qf}\t{s.method}\t{r.psnr:.4f}\t{r.ssim:.6f}\t{r.psnr_b:.4f}\t{r.elapsed:.4f}")
        return "\n".join(lines) + "\n"


def _load(path) -> SDNet:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def _even_crop(img: np.ndarray) -> np.ndarray:
    return img[: img.shape[0] // 2 * 2, : img.shape[1] // 2 * 2]


def evaluate_pairs(pairs: Sequence[tuple[str, np.ndarray, np.ndarray, int]], pixel_ckpt=None, wavelet_ckpt=None,
                   qfs: Sequence[int] | None = None) -> EvalTable:
    """Score ``(name, clean, degraded, qf)`` pairs; networks run only when both checkpoints are given.

    Branch estimates are clamped to [0, 255] for scoring, as any image output
    would be.  Odd-sized images are cropped to even before scoring.
    """
    if (pixel_ckpt is None) != (wavelet_ckpt is None):
        raise ValueError("give both checkpoints or neither")
    models = None
    if pixel_ckpt is not None:
        pm = pixel_ckpt if isinstance(pixel_ckpt, SDNet) else _load(pixel_ckpt)
        wm = wavelet_ckpt if isinstance(wavelet_ckpt, SDNet) else _load(wavelet_ckpt)
        if pm.branch is not Branch.PIXEL or wm.branch is not Branch.WAVELET:
            raise ValueError("checkpoints must be a pixel model and a wavelet model, in that order")
        models = pm, wm
    scores = []
    for name, clean, deg, qf in pairs:
        clean, deg = _even_crop(np.asarray(clean, np.float64)), _even_crop(np.asarray(deg, np.float64))
        scores.append(ImageScore(name, qf, "jpeg", M.evaluate(clean, deg)))
        if models is None:
            continue
        for branch, model in zip(("pixel", "wavelet"), models):
            t0 = time.perf_counter()
            est = np.clip(branch_estimate(model, deg), 0, 255)
            took = time.perf_counter() - t0
            scores.append(ImageScore(name, qf, branch, replace(M.evaluate(clean, est), elapsed=took)))
        t0 = time.perf_counter()
        fused = soft_decode(*models, deg).fused
        took = time.perf_counter() - t0
        scores.append(ImageScore(name, qf, "fused", replace(M.evaluate(clean, fused), elapsed=took)))
    if not scores:
        raise ValueError("nothing to evaluate")
    order = tuple(qfs) if qfs is not None else tuple(sorted({s.qf for s in scores}))
    return EvalTable(scores, order, METHODS if models else ("jpeg",))


def evaluate_corpus(pixel_ckpt, wavelet_ckpt, corpus_dir: str | os.PathLike, qfs: Sequence[int]) -> EvalTable:
    """Degrade every image of ``corpus_dir`` at each quality and score JPEG, both branches and the fusion."""
    if pixel_ckpt is not None:
        for path in (pixel_ckpt, wavelet_ckpt):
            if path is None or (not isinstance(path, SDNet) and not Path(path).is_file()):
                raise FileNotFoundError(f"checkpoint not found: {path}")
    paths = list_images(corpus_dir)
    if not paths:
        raise ValueError(f"no images in {corpus_dir}")
    images = [(p.name, read_gray(p)) for p in paths]
    pairs = [(name, img, degrade(img, q), q) for q in qfs for name, img in images]
    return evaluate_pairs(pairs, pixel_ckpt, wavelet_ckpt, qfs)


def evaluate_manifest(pixel_ckpt, wavelet_ckpt, manifest: str | os.PathLike) -> EvalTable:
    """Score the clean/degraded pairs listed in a manifest."""
    pairs = [(Path(e.clean).name, read_gray(e.clean), read_gray(e.degraded), e.qf) for e in read_manifest(manifest)]
    return evaluate_pairs(pairs, pixel_ckpt, wavelet_ckpt)


@dataclass(frozen=True)
class BenchRow:
    size: int
    method: str
    repeats: int
    median: float
    fastest: float


def bench_image(size: int, qf: int = 10) -> np.ndarray:
    """A ``size`` x ``size`` JPEG-degraded natural image (camera sample, cropped or mirrored out)."""
    from .datasets import sample_image

    base = sample_image("camera")
    if size <= min(base.shape):
        top = (base.shape[0] - size) // 2
        left = (base.shape[1] - size) // 2
        img = base[top:top + size, left:left + size]
    else:
        img = np.pad(base, ((0, size - base.shape[0]), (0, size - base.shape[1])), mode="symmetric")
    return degrade(img, qf)


def bench_decode(pixel_model: SDNet, wavelet_model: SDNet, sizes: Sequence[int], repeats: int = 5) -> list[BenchRow]:
    """Median-of-``repeats`` wall time of single-branch and fused decoding per image size.

    One untimed warm-up pass per size fills scratch buffers; the three
    methods are interleaved within each repeat so drift hits them alike.
    """
    if repeats < 1:
        raise ValueError(f"repeats must be at least 1, got {repeats}")
    runs = {
        "pixel": lambda img: branch_estimate(pixel_model, img),
        "wavelet": lambda img: branch_estimate(wavelet_model, img),
        "fused": lambda img: soft_decode(pixel_model, wavelet_model, img),
    }
    rows = []
    for size in sizes:
        if size < 2 or size % 2:
            raise ValueError(f"benchmark sizes must be even, got {size}")
        img = bench_image(size)
        runs["fused"](img)
        times: dict[str, list[float]] = {m: [] for m in runs}
        for _ in range(repeats):
            for method, fn in runs.items():
                t0 = time.perf_counter()
                fn(img)
                times[method].append(time.perf_counter() - t0)
        rows += [BenchRow(size, m, repeats, float(np.median(t)), float(np.min(t))) for m, t in times.items()]
    return rows


def fused_ratio(rows: Sequence[BenchRow], size: int) -> float:
    """Fused median time over the mean of the two single-branch medians."""
    by = {r.method: r.median for r in rows if r.size == size}
    return by["fused"] / (0.5 * (by["pixel"] + by["wavelet"]))
